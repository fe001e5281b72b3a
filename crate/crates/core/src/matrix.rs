//! Exact rational matrices for loop error propagation.
//!
//! Everything here is small and dense: loop states have a handful of
//! variables, so an n×n row-major `Vec<Rat>` with schoolbook products is
//! both the simplest and the fastest option. All arithmetic is exact; the
//! closed-form loop bound depends on `K^k` and on geometric sums of `K`
//! being computed without rounding.

use crate::rational::Rat;
use std::fmt;
use std::ops::{Index, IndexMut};

/// Dense n×n matrix of exact rationals.
#[derive(Clone, PartialEq, Eq)]
pub struct RatMatrix {
    n: usize,
    data: Vec<Rat>,
}

impl RatMatrix {
    /// The n×n zero matrix.
    pub fn zero(n: usize) -> RatMatrix {
        RatMatrix {
            n,
            data: vec![Rat::zero(); n * n],
        }
    }

    /// The n×n identity.
    pub fn identity(n: usize) -> RatMatrix {
        let mut m = RatMatrix::zero(n);
        for i in 0..n {
            m[(i, i)] = Rat::one();
        }
        m
    }

    /// Build from rows; panics if the shape is not square.
    pub fn from_rows(rows: Vec<Vec<Rat>>) -> RatMatrix {
        let n = rows.len();
        assert!(rows.iter().all(|r| r.len() == n), "matrix must be square");
        RatMatrix {
            n,
            data: rows.into_iter().flatten().collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_identity(&self) -> bool {
        *self == RatMatrix::identity(self.n)
    }

    /// Entrywise nonnegativity: the shape every propagation matrix of
    /// absolute-value bounds must have.
    pub fn is_nonnegative(&self) -> bool {
        self.data.iter().all(|x| !x.is_negative())
    }

    pub fn add(&self, other: &RatMatrix) -> RatMatrix {
        assert_eq!(self.n, other.n);
        RatMatrix {
            n: self.n,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &RatMatrix) -> RatMatrix {
        assert_eq!(self.n, other.n);
        RatMatrix {
            n: self.n,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn mul(&self, other: &RatMatrix) -> RatMatrix {
        assert_eq!(self.n, other.n);
        let n = self.n;
        let mut out = RatMatrix::zero(n);
        for i in 0..n {
            for k in 0..n {
                let a = &self[(i, k)];
                if a.is_zero() {
                    continue;
                }
                for j in 0..n {
                    let p = a * &other[(k, j)];
                    out[(i, j)] = &out[(i, j)] + &p;
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[Rat]) -> Vec<Rat> {
        assert_eq!(self.n, v.len());
        (0..self.n)
            .map(|i| {
                let mut acc = Rat::zero();
                for j in 0..self.n {
                    acc = &acc + &(&self[(i, j)] * &v[j]);
                }
                acc
            })
            .collect()
    }

    /// `self^k` by repeated squaring; `k = 0` gives the identity.
    pub fn pow(&self, k: u64) -> RatMatrix {
        let mut result = RatMatrix::identity(self.n);
        let mut base = self.clone();
        let mut k = k;
        while k > 0 {
            if k & 1 == 1 {
                result = result.mul(&base);
            }
            k >>= 1;
            if k > 0 {
                base = base.mul(&base);
            }
        }
        result
    }

    /// Exact inverse by Gauss-Jordan elimination with partial pivoting
    /// (largest absolute pivot, for fewer giant intermediate rationals).
    /// `None` if the matrix is singular.
    pub fn inverse(&self) -> Option<RatMatrix> {
        let n = self.n;
        let mut a = self.clone();
        let mut inv = RatMatrix::identity(n);
        for col in 0..n {
            // Pivot: largest |entry| at or below the diagonal.
            let pivot = (col..n).max_by(|&i, &j| {
                a[(i, col)].abs().cmp(&a[(j, col)].abs())
            })?;
            if a[(pivot, col)].is_zero() {
                return None;
            }
            if pivot != col {
                for j in 0..n {
                    a.data.swap(pivot * n + j, col * n + j);
                    inv.data.swap(pivot * n + j, col * n + j);
                }
            }
            let p = a[(col, col)].clone();
            for j in 0..n {
                a[(col, j)] = &a[(col, j)] / &p;
                inv[(col, j)] = &inv[(col, j)] / &p;
            }
            for i in 0..n {
                if i == col || a[(i, col)].is_zero() {
                    continue;
                }
                let f = a[(i, col)].clone();
                for j in 0..n {
                    let t = &f * &a[(col, j)];
                    a[(i, j)] = &a[(i, j)] - &t;
                    let t = &f * &inv[(col, j)];
                    inv[(i, j)] = &inv[(i, j)] - &t;
                }
            }
        }
        Some(inv)
    }

    /// `Σ_{i=0}^{k-1} self^i` by doubling: `S(2m) = S(m) + self^m · S(m)`.
    /// Defined for every matrix — this is the fallback when `I - K` has no
    /// inverse. `k = 0` gives the zero matrix.
    pub fn geometric_sum(&self, k: u64) -> RatMatrix {
        // Returns (S(k), self^k).
        fn go(m: &RatMatrix, k: u64) -> (RatMatrix, RatMatrix) {
            let n = m.n;
            if k == 0 {
                return (RatMatrix::zero(n), RatMatrix::identity(n));
            }
            if k == 1 {
                return (RatMatrix::identity(n), m.clone());
            }
            let (s_half, p_half) = go(m, k / 2);
            let s = s_half.add(&p_half.mul(&s_half));
            let p = p_half.mul(&p_half);
            if k % 2 == 0 {
                (s, p)
            } else {
                (s.add(&p), p.mul(m))
            }
        }
        go(self, k).0
    }
}

impl Index<(usize, usize)> for RatMatrix {
    type Output = Rat;
    fn index(&self, (i, j): (usize, usize)) -> &Rat {
        &self.data[i * self.n + j]
    }
}

impl IndexMut<(usize, usize)> for RatMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Rat {
        &mut self.data[i * self.n + j]
    }
}

impl fmt::Debug for RatMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "RatMatrix {}x{} [", self.n, self.n)?;
        for i in 0..self.n {
            write!(f, "  ")?;
            for j in 0..self.n {
                write!(f, "{} ", self[(i, j)])?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}
