//! Closed rational intervals: the range abstraction. All operations other
//! than square root are exact; square root returns an outward-rounded
//! enclosure whose added slack is at most 2^-100 per endpoint.

use crate::dyadic::Dy;
use crate::rational::{Dir, Rat};
use std::fmt;
use thiserror::Error;

#[derive(Clone, PartialEq, Eq)]
pub struct Interval {
    lo: Rat,
    hi: Rat,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum IntervalError {
    #[error("possible division by zero: divisor range contains 0")]
    DivisionByZero,
    #[error("possible square root of a negative value")]
    NegativeSqrt,
}

impl Interval {
    pub fn new(lo: Rat, hi: Rat) -> Interval {
        assert!(lo <= hi, "interval bounds out of order: [{lo}, {hi}]");
        Interval { lo, hi }
    }

    pub fn point(v: Rat) -> Interval {
        Interval {
            lo: v.clone(),
            hi: v,
        }
    }

    pub fn from_ints(lo: i64, hi: i64) -> Interval {
        Interval::new(Rat::from_int(lo), Rat::from_int(hi))
    }

    pub fn lo(&self) -> &Rat {
        &self.lo
    }

    pub fn hi(&self) -> &Rat {
        &self.hi
    }

    pub fn width(&self) -> Rat {
        &self.hi - &self.lo
    }

    pub fn mid(&self) -> Rat {
        &(&self.lo + &self.hi) * &Rat::from_ratio(1, 2)
    }

    pub fn is_point(&self) -> bool {
        self.lo == self.hi
    }

    pub fn contains(&self, v: &Rat) -> bool {
        &self.lo <= v && v <= &self.hi
    }

    pub fn contains_interval(&self, o: &Interval) -> bool {
        self.lo <= o.lo && o.hi <= self.hi
    }

    pub fn contains_zero(&self) -> bool {
        !self.lo.is_positive() && !self.hi.is_negative()
    }

    /// max |v| over the interval.
    pub fn max_abs(&self) -> Rat {
        Rat::max_of(&self.lo.abs(), &self.hi.abs())
    }

    /// min |v| over the interval (0 if it straddles zero).
    pub fn min_abs(&self) -> Rat {
        if self.contains_zero() {
            Rat::zero()
        } else {
            Rat::min_of(&self.lo.abs(), &self.hi.abs())
        }
    }

    pub fn neg(&self) -> Interval {
        Interval {
            lo: -&self.hi,
            hi: -&self.lo,
        }
    }

    pub fn add(&self, o: &Interval) -> Interval {
        Interval {
            lo: &self.lo + &o.lo,
            hi: &self.hi + &o.hi,
        }
    }

    pub fn sub(&self, o: &Interval) -> Interval {
        Interval {
            lo: &self.lo - &o.hi,
            hi: &self.hi - &o.lo,
        }
    }

    pub fn mul(&self, o: &Interval) -> Interval {
        let candidates = [
            &self.lo * &o.lo,
            &self.lo * &o.hi,
            &self.hi * &o.lo,
            &self.hi * &o.hi,
        ];
        let mut lo = candidates[0].clone();
        let mut hi = candidates[0].clone();
        for c in &candidates[1..] {
            if c < &lo {
                lo = c.clone();
            }
            if c > &hi {
                hi = c.clone();
            }
        }
        Interval { lo, hi }
    }

    pub fn div(&self, o: &Interval) -> Result<Interval, IntervalError> {
        if o.contains_zero() {
            return Err(IntervalError::DivisionByZero);
        }
        let inv = Interval {
            lo: o.hi.recip_checked().unwrap(),
            hi: o.lo.recip_checked().unwrap(),
        };
        Ok(self.mul(&inv))
    }

    /// Outward enclosure of the exact square-root image; each endpoint's
    /// added slack is at most 2^-100.
    pub fn sqrt(&self) -> Result<Interval, IntervalError> {
        if self.lo.is_negative() {
            return Err(IntervalError::NegativeSqrt);
        }
        Ok(Interval {
            lo: sqrt_rat(&self.lo, Dir::Down),
            hi: sqrt_rat(&self.hi, Dir::Up),
        })
    }

    pub fn scale(&self, c: &Rat) -> Interval {
        if c.is_negative() {
            Interval {
                lo: &self.hi * c,
                hi: &self.lo * c,
            }
        } else {
            Interval {
                lo: &self.lo * c,
                hi: &self.hi * c,
            }
        }
    }

    /// Widen by `r` on both sides (r >= 0).
    pub fn inflate(&self, r: &Rat) -> Interval {
        debug_assert!(!r.is_negative());
        Interval {
            lo: &self.lo - r,
            hi: &self.hi + r,
        }
    }

    pub fn hull(&self, o: &Interval) -> Interval {
        Interval {
            lo: Rat::min_of(&self.lo, &o.lo),
            hi: Rat::max_of(&self.hi, &o.hi),
        }
    }

    pub fn intersect(&self, o: &Interval) -> Option<Interval> {
        let lo = Rat::max_of(&self.lo, &o.lo);
        let hi = Rat::min_of(&self.hi, &o.hi);
        if lo <= hi {
            Some(Interval { lo, hi })
        } else {
            None
        }
    }
}

/// Directed rational square root with absolute slack <= 2^-100. The dyadic
/// working precision adapts to the magnitude so the *absolute* (not just
/// relative) slack bound holds.
pub fn sqrt_rat(v: &Rat, dir: Dir) -> Rat {
    if v.is_zero() {
        return Rat::zero();
    }
    assert!(v.is_positive(), "sqrt of negative rational");
    // Result magnitude ~ 2^(e/2); mantissa bits needed for 2^-100 absolute:
    // e/2 + 100 plus padding.
    let e = v.ilog2_floor_abs();
    let bits = (e / 2 + 110).max(110) as u64;
    let d = Dy::from_rat(v, dir);
    let root = d.sqrt(dir);
    // The dyadic sqrt ran at PRECISION (256) bits which already exceeds the
    // need for any magnitude below ~2^300; for larger magnitudes redo via a
    // scaled integer square root.
    if bits <= crate::dyadic::PRECISION {
        return root.to_rat();
    }
    // Huge-magnitude fallback: integer sqrt of v * 2^(2k) with k = 110.
    let k: i64 = 110;
    let scaled = v * &Rat::pow2(2 * k);
    let n = match dir {
        Dir::Down => scaled.floor_bigint(),
        Dir::Up => scaled.ceil_bigint(),
    };
    let r0 = n.sqrt();
    let r = match dir {
        Dir::Down => r0,
        Dir::Up => {
            if &r0 * &r0 == n {
                r0
            } else {
                r0 + 1
            }
        }
    };
    &Rat::from_bigint(r) * &Rat::pow2(-k)
}

impl fmt::Debug for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}, {}]",
            self.lo.to_decimal(17, Dir::Down),
            self.hi.to_decimal(17, Dir::Up)
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(s: &str) -> Rat {
        s.parse().unwrap()
    }

    fn iv(lo: i64, hi: i64) -> Interval {
        Interval::from_ints(lo, hi)
    }

    #[test]
    fn mul_reference_case() {
        // [-5,3] * [-3,1] = [-9,15]
        let result = iv(-5, 3).mul(&iv(-3, 1));
        assert_eq!(result, iv(-9, 15));
    }

    #[test]
    fn add_points() {
        assert_eq!(iv(2, 2).add(&iv(3, 3)), iv(5, 5));
    }

    #[test]
    fn div_excludes_zero() {
        assert_eq!(iv(1, 2).div(&iv(-1, 1)), Err(IntervalError::DivisionByZero));
        let q = iv(1, 2).div(&iv(2, 4)).unwrap();
        assert_eq!(q, Interval::new(Rat::from_ratio(1, 4), Rat::one()));
        // Negative divisor interval.
        let q = iv(1, 2).div(&iv(-4, -2)).unwrap();
        assert_eq!(q, Interval::new(-Rat::one(), Rat::from_ratio(-1, 4)));
    }

    #[test]
    fn sqrt_enclosure_perfect_squares() {
        let s = iv(1, 4).sqrt().unwrap();
        assert!(s.lo() <= &Rat::one() && &Rat::one() <= s.hi());
        assert!(s.contains(&Rat::from_int(2)));
        // Width <= (2 - 1) + 2 * 2^-100.
        let max_width = &Rat::one() + &(&Rat::from_int(2) * &Rat::pow2(-100));
        assert!(s.width() <= max_width);
    }

    #[test]
    fn sqrt_slack_bound() {
        for v in ["2", "3.7", "0.005", "123456.789", "1e12"] {
            let v = r(v);
            let lo = sqrt_rat(&v, Dir::Down);
            let hi = sqrt_rat(&v, Dir::Up);
            assert!(&lo * &lo <= v, "lo^2 <= v for {v}");
            assert!(&hi * &hi >= v, "hi^2 >= v for {v}");
            assert!(&hi - &lo <= Rat::pow2(-100), "slack for {v}");
        }
    }

    #[test]
    fn negative_sqrt_rejected() {
        assert_eq!(iv(-1, 4).sqrt(), Err(IntervalError::NegativeSqrt));
    }

    #[test]
    fn hull_intersect_inflate() {
        let a = iv(0, 2);
        let b = iv(1, 5);
        assert_eq!(a.hull(&b), iv(0, 5));
        assert_eq!(a.intersect(&b), Some(iv(1, 2)));
        assert_eq!(iv(0, 1).intersect(&iv(2, 3)), None);
        assert_eq!(a.inflate(&Rat::one()), iv(-1, 3));
    }

    #[test]
    fn abs_helpers() {
        assert_eq!(iv(-5, 3).max_abs(), Rat::from_int(5));
        assert_eq!(iv(-5, 3).min_abs(), Rat::zero());
        assert_eq!(iv(2, 7).min_abs(), Rat::from_int(2));
        assert_eq!(iv(-7, -2).min_abs(), Rat::from_int(2));
    }
}
