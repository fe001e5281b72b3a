//! Bounded-size dyadic arithmetic with directed rounding, and intervals over
//! it. A dyadic is m * 2^e — still an exact rational — but unlike general
//! rationals its size stays bounded: after every operation the mantissa is
//! rounded (in a stated direction, so enclosures stay sound) back to
//! [`PRECISION`] bits. This is what makes long iteration chains tractable
//! where exact rationals would grow multiplicatively per step.

use crate::rational::{Dir, Rat};
use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{Signed, Zero};
use std::cmp::Ordering;
use std::fmt;

/// Mantissa budget. 256 bits keeps enclosure widths around 2^-200 relative,
/// vastly below every bound this tool ever certifies.
pub const PRECISION: u64 = 256;

/// m * 2^e. Not normalized beyond the mantissa-size cap.
#[derive(Clone, PartialEq, Eq)]
pub struct Dy {
    m: BigInt,
    e: i64,
}

impl Dy {
    pub fn zero() -> Dy {
        Dy {
            m: BigInt::zero(),
            e: 0,
        }
    }

    pub fn from_int(n: i64) -> Dy {
        Dy {
            m: BigInt::from(n),
            e: 0,
        }
    }

    pub fn from_f64(x: f64) -> Dy {
        // Finite doubles decompose exactly.
        assert!(x.is_finite());
        let bits = x.to_bits();
        let sign = if bits >> 63 == 1 { -1 } else { 1 };
        let exp_field = ((bits >> 52) & 0x7FF) as i64;
        let frac = bits & ((1u64 << 52) - 1);
        let (mant, exp) = if exp_field == 0 {
            (frac, -1074)
        } else {
            (frac | (1u64 << 52), exp_field - 1075)
        };
        Dy {
            m: BigInt::from(sign) * BigInt::from(mant),
            e: exp,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.m.is_zero()
    }

    pub fn is_negative(&self) -> bool {
        self.m.is_negative()
    }

    pub fn to_rat(&self) -> Rat {
        &Rat::from_bigint(self.m.clone()) * &Rat::pow2(self.e)
    }

    /// Directed conversion from an arbitrary rational.
    pub fn from_rat(v: &Rat, dir: Dir) -> Dy {
        if v.is_zero() {
            return Dy::zero();
        }
        if v.is_integer() {
            return Dy {
                m: v.numer().clone(),
                e: 0,
            }
            .norm(dir);
        }
        let e = v.ilog2_floor_abs();
        let k = PRECISION as i64 + 1 - e;
        // m = dir-rounded v * 2^k.
        let scaled = v * &Rat::pow2(k);
        let m = match dir {
            Dir::Down => scaled.floor_bigint(),
            Dir::Up => scaled.ceil_bigint(),
        };
        Dy { m, e: -k }.norm(dir)
    }

    /// Round the mantissa back under the precision cap, in direction `dir`
    /// (on the number line).
    fn norm(mut self, dir: Dir) -> Dy {
        let bits = self.m.magnitude().bits();
        if bits <= PRECISION {
            return self;
        }
        let shift = bits - PRECISION;
        let dropped_nonzero = match self.m.trailing_zeros() {
            Some(tz) => tz < shift,
            None => false,
        };
        // BigInt >> is arithmetic (floor) shift.
        self.m = &self.m >> shift;
        if dropped_nonzero && dir == Dir::Up {
            self.m += 1;
        }
        self.e += shift as i64;
        self
    }

    pub fn neg(&self) -> Dy {
        Dy {
            m: -&self.m,
            e: self.e,
        }
    }

    pub fn abs(&self) -> Dy {
        Dy {
            m: self.m.abs(),
            e: self.e,
        }
    }

    pub fn add(&self, other: &Dy, dir: Dir) -> Dy {
        if self.is_zero() {
            return other.clone();
        }
        if other.is_zero() {
            return self.clone();
        }
        let e = self.e.min(other.e);
        let ma = &self.m << (self.e - e) as u64;
        let mb = &other.m << (other.e - e) as u64;
        Dy { m: ma + mb, e }.norm(dir)
    }

    pub fn sub(&self, other: &Dy, dir: Dir) -> Dy {
        self.add(&other.neg(), dir)
    }

    pub fn mul(&self, other: &Dy, dir: Dir) -> Dy {
        Dy {
            m: &self.m * &other.m,
            e: self.e + other.e,
        }
        .norm(dir)
    }

    /// Exact product (mantissa can reach 2x precision); callers that take a
    /// min/max over several products normalize once at the end.
    pub fn mul_exact(&self, other: &Dy) -> Dy {
        Dy {
            m: &self.m * &other.m,
            e: self.e + other.e,
        }
    }

    pub fn div(&self, other: &Dy, dir: Dir) -> Dy {
        assert!(!other.is_zero(), "dyadic division by zero");
        if self.is_zero() {
            return Dy::zero();
        }
        let k = (PRECISION as i64 + 2 + other.m.magnitude().bits() as i64
            - self.m.magnitude().bits() as i64)
            .max(0);
        let n = &self.m << k as u64;
        let m = div_dir(&n, &other.m, dir);
        Dy {
            m,
            e: self.e - other.e - k,
        }
        .norm(dir)
    }

    /// Directed square root; `self` must be >= 0.
    pub fn sqrt(&self, dir: Dir) -> Dy {
        assert!(!self.is_negative(), "dyadic sqrt of negative");
        if self.is_zero() {
            return Dy::zero();
        }
        // Scale so the mantissa is big and the exponent even.
        let bits = self.m.magnitude().bits() as i64;
        let mut s = (2 * PRECISION as i64 - bits).max(0);
        if (self.e - s) % 2 != 0 {
            s += 1;
        }
        let scaled = &self.m << s as u64;
        let root = scaled.sqrt(); // floor integer sqrt
        let m = match dir {
            Dir::Down => root,
            Dir::Up => {
                if &root * &root == scaled {
                    root
                } else {
                    root + 1
                }
            }
        };
        Dy {
            m,
            e: (self.e - s) / 2,
        }
        .norm(dir)
    }

    pub fn cmp_val(&self, other: &Dy) -> Ordering {
        let sa = self.m.sign();
        let sb = other.m.sign();
        if sa != sb {
            return sa.cmp(&sb);
        }
        let e = self.e.min(other.e);
        let ma = &self.m << (self.e - e) as u64;
        let mb = &other.m << (other.e - e) as u64;
        ma.cmp(&mb)
    }
}

/// Floor (Down) or ceiling (Up) of n/d on the number line.
fn div_dir(n: &BigInt, d: &BigInt, dir: Dir) -> BigInt {
    match dir {
        Dir::Down => n.div_floor(d),
        Dir::Up => -(-n).div_floor(d),
    }
}

impl PartialOrd for Dy {
    fn partial_cmp(&self, other: &Dy) -> Option<Ordering> {
        Some(self.cmp_val(other))
    }
}

impl fmt::Debug for Dy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}*2^{}", self.m, self.e)
    }
}

/// Closed interval with dyadic endpoints; all operations round outward, so
/// the result always contains the exact image.
#[derive(Clone, Debug)]
pub struct DyInterval {
    pub lo: Dy,
    pub hi: Dy,
}

/// Arithmetic failures the evaluator must surface rather than absorb.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DyError {
    DivisionByZero,
    NegativeSqrt,
}

impl DyInterval {
    pub fn point_rat(v: &Rat) -> DyInterval {
        DyInterval {
            lo: Dy::from_rat(v, Dir::Down),
            hi: Dy::from_rat(v, Dir::Up),
        }
    }

    pub fn from_rats(lo: &Rat, hi: &Rat) -> DyInterval {
        debug_assert!(lo <= hi);
        DyInterval {
            lo: Dy::from_rat(lo, Dir::Down),
            hi: Dy::from_rat(hi, Dir::Up),
        }
    }

    pub fn point_f64(v: f64) -> DyInterval {
        let d = Dy::from_f64(v);
        DyInterval {
            lo: d.clone(),
            hi: d,
        }
    }

    pub fn lo_rat(&self) -> Rat {
        self.lo.to_rat()
    }

    pub fn hi_rat(&self) -> Rat {
        self.hi.to_rat()
    }

    pub fn contains_zero(&self) -> bool {
        // lo <= 0 <= hi
        (self.lo.is_negative() || self.lo.is_zero()) && !self.hi.is_negative()
    }

    pub fn add(&self, o: &DyInterval) -> DyInterval {
        DyInterval {
            lo: self.lo.add(&o.lo, Dir::Down),
            hi: self.hi.add(&o.hi, Dir::Up),
        }
    }

    pub fn sub(&self, o: &DyInterval) -> DyInterval {
        DyInterval {
            lo: self.lo.sub(&o.hi, Dir::Down),
            hi: self.hi.sub(&o.lo, Dir::Up),
        }
    }

    pub fn neg(&self) -> DyInterval {
        DyInterval {
            lo: self.hi.neg(),
            hi: self.lo.neg(),
        }
    }

    pub fn mul(&self, o: &DyInterval) -> DyInterval {
        let products = [
            self.lo.mul_exact(&o.lo),
            self.lo.mul_exact(&o.hi),
            self.hi.mul_exact(&o.lo),
            self.hi.mul_exact(&o.hi),
        ];
        let mut lo = products[0].clone();
        let mut hi = products[0].clone();
        for p in &products[1..] {
            if p.cmp_val(&lo) == Ordering::Less {
                lo = p.clone();
            }
            if p.cmp_val(&hi) == Ordering::Greater {
                hi = p.clone();
            }
        }
        DyInterval {
            lo: lo.norm(Dir::Down),
            hi: hi.norm(Dir::Up),
        }
    }

    pub fn div(&self, o: &DyInterval) -> Result<DyInterval, DyError> {
        if o.contains_zero() {
            return Err(DyError::DivisionByZero);
        }
        let mut lo: Option<Dy> = None;
        let mut hi: Option<Dy> = None;
        for a in [&self.lo, &self.hi] {
            for b in [&o.lo, &o.hi] {
                let down = a.div(b, Dir::Down);
                let up = a.div(b, Dir::Up);
                lo = Some(match lo {
                    None => down,
                    Some(c) if down.cmp_val(&c) == Ordering::Less => down,
                    Some(c) => c,
                });
                hi = Some(match hi {
                    None => up,
                    Some(c) if up.cmp_val(&c) == Ordering::Greater => up,
                    Some(c) => c,
                });
            }
        }
        Ok(DyInterval {
            lo: lo.unwrap(),
            hi: hi.unwrap(),
        })
    }

    pub fn sqrt(&self) -> Result<DyInterval, DyError> {
        if self.lo.is_negative() {
            return Err(DyError::NegativeSqrt);
        }
        Ok(DyInterval {
            lo: self.lo.sqrt(Dir::Down),
            hi: self.hi.sqrt(Dir::Up),
        })
    }

    /// Outward-rounded max of |v| over the interval.
    pub fn max_abs(&self) -> Dy {
        let a = self.lo.abs();
        let b = self.hi.abs();
        if a.cmp_val(&b) == Ordering::Greater {
            a
        } else {
            b
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(s: &str) -> Rat {
        s.parse().unwrap()
    }

    #[test]
    fn roundtrip_small() {
        let v = r("3.125"); // exactly dyadic
        assert_eq!(Dy::from_rat(&v, Dir::Down).to_rat(), v);
        assert_eq!(Dy::from_rat(&v, Dir::Up).to_rat(), v);
    }

    #[test]
    fn directed_conversion_brackets() {
        let v = Rat::from_ratio(1, 3);
        let lo = Dy::from_rat(&v, Dir::Down).to_rat();
        let hi = Dy::from_rat(&v, Dir::Up).to_rat();
        assert!(lo <= v && v <= hi);
        assert!(&hi - &lo < Rat::pow2(-250));
        let v = Rat::from_ratio(-1, 3);
        let lo = Dy::from_rat(&v, Dir::Down).to_rat();
        let hi = Dy::from_rat(&v, Dir::Up).to_rat();
        assert!(lo <= v && v <= hi);
    }

    #[test]
    fn ops_bracket_exact_rationals() {
        let cases = [
            (r("1.7"), r("-0.3")),
            (r("123456.789"), r("0.0001")),
            (Rat::from_ratio(22, 7), Rat::from_ratio(-355, 113)),
        ];
        for (a, b) in cases {
            let da = DyInterval::point_rat(&a);
            let db = DyInterval::point_rat(&b);
            let sum = da.add(&db);
            assert!(sum.lo_rat() <= &a + &b && &a + &b <= sum.hi_rat());
            let prod = da.mul(&db);
            assert!(prod.lo_rat() <= &a * &b && &a * &b <= prod.hi_rat());
            let quot = da.div(&db).unwrap();
            let exact = &a / &b;
            assert!(quot.lo_rat() <= exact && exact <= quot.hi_rat());
        }
    }

    #[test]
    fn sqrt_brackets_and_tightness() {
        let four = Dy::from_int(4);
        assert_eq!(four.sqrt(Dir::Down).to_rat(), Rat::from_int(2));
        assert_eq!(four.sqrt(Dir::Up).to_rat(), Rat::from_int(2));
        let two = DyInterval::point_rat(&Rat::from_int(2));
        let s = two.sqrt().unwrap();
        let lo = s.lo_rat();
        let hi = s.hi_rat();
        assert!(&lo * &lo <= Rat::from_int(2));
        assert!(&hi * &hi >= Rat::from_int(2));
        assert!(&hi - &lo < Rat::pow2(-200));
    }

    #[test]
    fn div_by_zero_detected() {
        let a = DyInterval::point_rat(&Rat::one());
        let z = DyInterval::from_rats(&Rat::from_int(-1), &Rat::from_int(1));
        assert!(matches!(a.div(&z), Err(DyError::DivisionByZero)));
    }

    #[test]
    fn long_chain_stays_bounded() {
        // 200 iterations of x -> x*1.01 + 0.5 keeps mantissas capped.
        let mut x = DyInterval::point_rat(&Rat::one());
        let c = DyInterval::point_rat(&r("1.01"));
        let d = DyInterval::point_rat(&r("0.5"));
        for _ in 0..200 {
            x = x.mul(&c).add(&d);
        }
        assert!(x.lo.m.magnitude().bits() <= PRECISION + 1);
        let width = &x.hi_rat() - &x.lo_rat();
        assert!(width < r("1e-40"));
        // Exact value is 51 * 1.01^200 - 50 = 323.1169...
        assert!(x.lo_rat() > r("323.11"));
        assert!(x.hi_rat() < r("323.12"));
    }
}
