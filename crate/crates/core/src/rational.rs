//! Exact arbitrary-precision rational arithmetic: the substrate for every
//! analysis computation. No hardware floating point participates anywhere in
//! the analysis; floats only appear when parsing literals is *not* involved
//! (literals are parsed exactly) and when converting final values for
//! simulation or display.

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::str::FromStr;

/// Exact signed rational, always in lowest terms with positive denominator.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Rat(BigRational);

/// Rounding direction on the number line.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Dir {
    /// Toward negative infinity (floor).
    Down,
    /// Toward positive infinity (ceiling).
    Up,
}

impl Dir {
    pub fn flip(self) -> Dir {
        match self {
            Dir::Down => Dir::Up,
            Dir::Up => Dir::Down,
        }
    }
}

impl Rat {
    pub fn zero() -> Rat {
        Rat(BigRational::zero())
    }

    pub fn one() -> Rat {
        Rat(BigRational::one())
    }

    pub fn from_int(n: i64) -> Rat {
        Rat(BigRational::from_integer(BigInt::from(n)))
    }

    pub fn from_bigint(n: BigInt) -> Rat {
        Rat(BigRational::from_integer(n))
    }

    /// `num/den`; panics if `den` is zero (internal misuse, not input data).
    pub fn new(num: BigInt, den: BigInt) -> Rat {
        assert!(!den.is_zero(), "rational with zero denominator");
        Rat(BigRational::new(num, den))
    }

    pub fn from_ratio(num: i64, den: i64) -> Rat {
        Rat::new(BigInt::from(num), BigInt::from(den))
    }

    /// 2^k for any integer k (negative k gives 1/2^|k|).
    pub fn pow2(k: i64) -> Rat {
        let mag = BigInt::one() << k.unsigned_abs();
        if k >= 0 {
            Rat::from_bigint(mag)
        } else {
            Rat::new(BigInt::one(), mag)
        }
    }

    /// Exact value of a finite f64 (every finite double is a rational).
    pub fn from_f64(x: f64) -> Option<Rat> {
        BigRational::from_float(x).map(Rat)
    }

    pub fn from_f32(x: f32) -> Option<Rat> {
        BigRational::from_float(x).map(Rat)
    }

    pub fn numer(&self) -> &BigInt {
        self.0.numer()
    }

    pub fn denom(&self) -> &BigInt {
        self.0.denom()
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn is_negative(&self) -> bool {
        self.0.is_negative()
    }

    pub fn is_positive(&self) -> bool {
        self.0.is_positive()
    }

    pub fn is_integer(&self) -> bool {
        self.0.is_integer()
    }

    pub fn abs(&self) -> Rat {
        Rat(self.0.abs())
    }

    pub fn recip_checked(&self) -> Option<Rat> {
        if self.is_zero() {
            None
        } else {
            Some(Rat(self.0.recip()))
        }
    }

    pub fn square(&self) -> Rat {
        self * self
    }

    pub fn min_of(a: &Rat, b: &Rat) -> Rat {
        if a <= b {
            a.clone()
        } else {
            b.clone()
        }
    }

    pub fn max_of(a: &Rat, b: &Rat) -> Rat {
        if a >= b {
            a.clone()
        } else {
            b.clone()
        }
    }

    pub fn floor_bigint(&self) -> BigInt {
        self.0.floor().to_integer()
    }

    pub fn ceil_bigint(&self) -> BigInt {
        self.0.ceil().to_integer()
    }

    /// Truncation toward zero.
    pub fn trunc_bigint(&self) -> BigInt {
        self.0.trunc().to_integer()
    }

    /// floor(log2 |v|) computed exactly; `self` must be nonzero.
    pub fn ilog2_floor_abs(&self) -> i64 {
        assert!(!self.is_zero());
        let p = self.numer().magnitude();
        let q = self.denom().magnitude();
        // |v| in [2^(e-1), 2^(e+1)) for e = bits(p) - bits(q).
        let mut e = p.bits() as i64 - q.bits() as i64;
        // Adjust so that 2^e <= |v| < 2^(e+1).
        while !ge_pow2(p, q, e) {
            e -= 1;
        }
        while ge_pow2(p, q, e + 1) {
            e += 1;
        }
        e
    }

    /// Directed rounding to a dyadic with a `bits`-bit mantissa:
    /// result has the form m * 2^k, |result - self| <= 2^(ilog2|self| + 1 - bits),
    /// and result >= self for `Dir::Up`, <= for `Dir::Down`. Exact values whose
    /// mantissa already fits are returned unchanged.
    pub fn round_dyadic(&self, bits: u32, dir: Dir) -> Rat {
        if self.is_zero() {
            return Rat::zero();
        }
        let e = self.ilog2_floor_abs();
        let k = bits as i64 - 1 - e; // scale so |v * 2^k| has `bits` bits
        let scaled = self * &Rat::pow2(k);
        let m = match dir {
            Dir::Down => scaled.floor_bigint(),
            Dir::Up => scaled.ceil_bigint(),
        };
        &Rat::from_bigint(m) * &Rat::pow2(-k)
    }

    /// Nearest f64, ties to even; overflows to +/- infinity.
    pub fn to_f64(&self) -> f64 {
        match self.to_float_parts(53, -1074, 1024) {
            FloatParts::Zero => {
                if self.is_negative() {
                    -0.0
                } else {
                    0.0
                }
            }
            FloatParts::Inf(neg) => {
                if neg {
                    f64::NEG_INFINITY
                } else {
                    f64::INFINITY
                }
            }
            FloatParts::Finite { neg, mant, exp } => {
                let sign = (neg as u64) << 63;
                let bits = if mant >= (1u64 << 52) {
                    // Normal: value = mant * 2^exp with 2^52 <= mant < 2^53.
                    let biased = (exp + 52 + 1023) as u64;
                    debug_assert!((1..=2046).contains(&biased));
                    sign | (biased << 52) | (mant & ((1u64 << 52) - 1))
                } else {
                    // Subnormal: exp == -1074.
                    debug_assert_eq!(exp, -1074);
                    sign | mant
                };
                f64::from_bits(bits)
            }
        }
    }

    /// Nearest f32, ties to even; overflows to +/- infinity.
    pub fn to_f32(&self) -> f32 {
        match self.to_float_parts(24, -149, 128) {
            FloatParts::Zero => {
                if self.is_negative() {
                    -0.0
                } else {
                    0.0
                }
            }
            FloatParts::Inf(neg) => {
                if neg {
                    f32::NEG_INFINITY
                } else {
                    f32::INFINITY
                }
            }
            FloatParts::Finite { neg, mant, exp } => {
                let sign = (neg as u32) << 31;
                let mant = mant as u32;
                let bits = if mant >= (1u32 << 23) {
                    let biased = (exp + 23 + 127) as u32;
                    debug_assert!((1..=254).contains(&biased));
                    sign | (biased << 23) | (mant & ((1u32 << 23) - 1))
                } else {
                    debug_assert_eq!(exp, -149);
                    sign | mant
                };
                f32::from_bits(bits)
            }
        }
    }

    /// Round-to-nearest-even at the granularity of the target format, with
    /// subnormal clamping and overflow detection.
    fn to_float_parts(&self, mant_bits: u32, quantum_exp: i64, max_binade: i64) -> FloatParts {
        if self.is_zero() {
            return FloatParts::Zero;
        }
        let neg = self.is_negative();
        let p = self.numer().magnitude().clone();
        let q = self.denom().magnitude().clone();
        let msb = self.ilog2_floor_abs();
        let normal_gran = msb - (mant_bits as i64 - 1);
        let gran = normal_gran.max(quantum_exp);
        let mut m = round_shifted_nearest_even(&p, &q, -gran);
        let mut gran = gran;
        if m.bits() > mant_bits as u64 {
            // Rounding carried into a new binade (m == 2^mant_bits exactly).
            m >>= 1u32;
            gran += 1;
        }
        if m.is_zero() {
            return FloatParts::Zero; // underflow to zero
        }
        let top = gran + m.bits() as i64 - 1;
        if top >= max_binade {
            return FloatParts::Inf(neg);
        }
        let mant = u64::try_from(&m).expect("mantissa fits u64");
        FloatParts::Finite {
            neg,
            mant,
            exp: gran,
        }
    }

    /// Decimal scientific representation with `sig` significant digits,
    /// rounded in the given direction on the number line (Down never exceeds
    /// the value, Up is never below it). Deterministic; used for reports.
    pub fn to_decimal(&self, sig: usize, dir: Dir) -> String {
        assert!(sig >= 1);
        if self.is_zero() {
            return "0".to_string();
        }
        let neg = self.is_negative();
        let mag = self.abs();
        // Magnitude rounding direction implied by sign + line direction.
        let mag_dir = if neg { dir.flip() } else { dir };
        let mut e10 = ilog10_floor(&mag);
        let mut digits = scale_digits(&mag, sig, e10, mag_dir);
        let ten_pow_sig = BigUint::from(10u32).pow(sig as u32);
        if digits >= ten_pow_sig {
            // Rounded up into the next decade (e.g. 9.99 -> 10.0).
            e10 += 1;
            digits = scale_digits(&mag, sig, e10, mag_dir);
        }
        let ds = digits.to_string();
        let ds = format!("{:0>width$}", ds, width = sig);
        let mut out = String::new();
        if neg {
            out.push('-');
        }
        out.push_str(&ds[..1]);
        if sig > 1 {
            out.push('.');
            out.push_str(&ds[1..]);
        }
        if e10 != 0 {
            out.push('e');
            out.push_str(&e10.to_string());
        }
        out
    }

    /// Exact `p/q` form (or plain integer when q == 1).
    pub fn to_exact_string(&self) -> String {
        if self.0.is_integer() {
            self.numer().to_string()
        } else {
            format!("{}/{}", self.numer(), self.denom())
        }
    }

    /// Exact finite decimal string, when one exists (denominator 2^a * 5^b);
    /// integers print without a point. None for repeating expansions.
    pub fn to_exact_decimal(&self) -> Option<String> {
        if self.0.is_integer() {
            return Some(self.numer().to_string());
        }
        let (mut a, mut b) = (0u32, 0u32);
        let mut rest = self.denom().magnitude().clone();
        let two = BigUint::from(2u32);
        let five = BigUint::from(5u32);
        while (&rest % &two).is_zero() {
            rest /= &two;
            a += 1;
        }
        while (&rest % &five).is_zero() {
            rest /= &five;
            b += 1;
        }
        if rest != BigUint::from(1u32) {
            return None;
        }
        let s = a.max(b);
        let scale = BigUint::from(5u32).pow(s - b) * BigUint::from(2u32).pow(s - a);
        let digits = (self.numer().magnitude() * &scale).to_string();
        let digits = format!("{:0>width$}", digits, width = s as usize + 1);
        let split = digits.len() - s as usize;
        let mut out = String::new();
        if self.is_negative() {
            out.push('-');
        }
        out.push_str(&digits[..split]);
        out.push('.');
        out.push_str(&digits[split..]);
        Some(out)
    }
}

enum FloatParts {
    Zero,
    Inf(bool),
    Finite { neg: bool, mant: u64, exp: i64 },
}

/// Is |p/q| >= 2^e ?
fn ge_pow2(p: &BigUint, q: &BigUint, e: i64) -> bool {
    if e >= 0 {
        *p >= (q << e as u64)
    } else {
        (p << (-e) as u64) >= *q
    }
}

/// round_half_even(p * 2^shift / q) over nonnegative integers.
fn round_shifted_nearest_even(p: &BigUint, q: &BigUint, shift: i64) -> BigUint {
    let (n, d) = if shift >= 0 {
        (p << shift as u64, q.clone())
    } else {
        (p.clone(), q << (-shift) as u64)
    };
    let (qt, r) = n.div_rem(&d);
    let twice = &r << 1u32;
    match twice.cmp(&d) {
        Ordering::Less => qt,
        Ordering::Greater => qt + 1u32,
        Ordering::Equal => {
            if (&qt & BigUint::one()).is_zero() {
                qt
            } else {
                qt + 1u32
            }
        }
    }
}

/// floor(log10 |v|) for nonzero v, exact.
fn ilog10_floor(mag: &Rat) -> i64 {
    debug_assert!(mag.is_positive());
    // Estimate from binary logarithm: log10 = log2 * 0.30103...
    let e2 = mag.ilog2_floor_abs();
    let mut e10 = (e2 as f64 * std::f64::consts::LOG10_2).floor() as i64;
    while ge_pow10(mag, e10 + 1) {
        e10 += 1;
    }
    while !ge_pow10(mag, e10) {
        e10 -= 1;
    }
    e10
}

/// Is |v| >= 10^e ?
fn ge_pow10(mag: &Rat, e: i64) -> bool {
    let ten = BigInt::from(10);
    let pow = ten.pow(e.unsigned_abs() as u32);
    let threshold = if e >= 0 {
        Rat::from_bigint(pow)
    } else {
        Rat::new(BigInt::one(), pow)
    };
    *mag >= threshold
}

/// Directed integer digits of mag * 10^(sig-1-e10).
fn scale_digits(mag: &Rat, sig: usize, e10: i64, dir: Dir) -> BigUint {
    let k = sig as i64 - 1 - e10;
    let ten = BigInt::from(10);
    let pow = ten.pow(k.unsigned_abs() as u32);
    let scaled = if k >= 0 {
        mag * &Rat::from_bigint(pow)
    } else {
        mag / &Rat::from_bigint(pow)
    };
    let n = match dir {
        Dir::Down => scaled.floor_bigint(),
        Dir::Up => scaled.ceil_bigint(),
    };
    n.magnitude().clone()
}

impl FromStr for Rat {
    type Err = String;

    /// Exact decimal parsing: `-12`, `3.25`, `1e-11`, `2.5E3`. No binary
    /// conversion loss: `1e-11` is exactly 1/10^11.
    fn from_str(s: &str) -> Result<Rat, String> {
        let s = s.trim();
        if s.is_empty() {
            return Err("empty number".into());
        }
        let (neg, rest) = match s.as_bytes()[0] {
            b'-' => (true, &s[1..]),
            b'+' => (false, &s[1..]),
            _ => (false, s),
        };
        let (mant_str, exp) = match rest.find(['e', 'E']) {
            Some(i) => {
                let exp: i64 = rest[i + 1..]
                    .parse()
                    .map_err(|_| format!("bad exponent in `{s}`"))?;
                (&rest[..i], exp)
            }
            None => (rest, 0),
        };
        let (int_part, frac_part) = match mant_str.find('.') {
            Some(i) => (&mant_str[..i], &mant_str[i + 1..]),
            None => (mant_str, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(format!("no digits in `{s}`"));
        }
        if !int_part.bytes().all(|b| b.is_ascii_digit())
            || !frac_part.bytes().all(|b| b.is_ascii_digit())
        {
            return Err(format!("invalid digits in `{s}`"));
        }
        let digits: String = format!("{int_part}{frac_part}");
        let mant = BigInt::parse_bytes(digits.as_bytes(), 10).ok_or("digit parse failure")?;
        let scale = exp - frac_part.len() as i64;
        let ten = BigInt::from(10);
        let pow = ten.pow(scale.unsigned_abs() as u32);
        let v = if scale >= 0 {
            Rat::from_bigint(mant * pow)
        } else {
            Rat::new(mant, pow)
        };
        Ok(if neg { -&v } else { v })
    }
}

impl Hash for Rat {
    fn hash<H: Hasher>(&self, state: &mut H) {
        // Canonical (reduced, positive denominator) form makes this stable.
        match self.numer().sign() {
            Sign::Minus => state.write_u8(2),
            Sign::NoSign => state.write_u8(0),
            Sign::Plus => state.write_u8(1),
        }
        self.numer().magnitude().to_bytes_le().hash(state);
        self.denom().magnitude().to_bytes_le().hash(state);
    }
}

impl fmt::Debug for Rat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_exact_string())
    }
}

impl fmt::Display for Rat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_exact_string())
    }
}

macro_rules! forward_binop {
    ($trait:ident, $method:ident) => {
        impl $trait for &Rat {
            type Output = Rat;
            fn $method(self, rhs: &Rat) -> Rat {
                Rat($trait::$method(&self.0, &rhs.0))
            }
        }
        impl $trait for Rat {
            type Output = Rat;
            fn $method(self, rhs: Rat) -> Rat {
                Rat($trait::$method(self.0, rhs.0))
            }
        }
        impl $trait<&Rat> for Rat {
            type Output = Rat;
            fn $method(self, rhs: &Rat) -> Rat {
                Rat($trait::$method(self.0, &rhs.0))
            }
        }
        impl $trait<Rat> for &Rat {
            type Output = Rat;
            fn $method(self, rhs: Rat) -> Rat {
                Rat($trait::$method(&self.0, rhs.0))
            }
        }
    };
}

forward_binop!(Add, add);
forward_binop!(Sub, sub);
forward_binop!(Mul, mul);

impl Div for &Rat {
    type Output = Rat;
    fn div(self, rhs: &Rat) -> Rat {
        assert!(!rhs.is_zero(), "rational division by zero");
        Rat(&self.0 / &rhs.0)
    }
}

impl Div for Rat {
    type Output = Rat;
    fn div(self, rhs: Rat) -> Rat {
        &self / &rhs
    }
}

impl Div<&Rat> for Rat {
    type Output = Rat;
    fn div(self, rhs: &Rat) -> Rat {
        &self / rhs
    }
}

impl Neg for &Rat {
    type Output = Rat;
    fn neg(self) -> Rat {
        Rat(-&self.0)
    }
}

impl Neg for Rat {
    type Output = Rat;
    fn neg(self) -> Rat {
        Rat(-self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(s: &str) -> Rat {
        s.parse().unwrap()
    }

    #[test]
    fn decimal_parse_exact() {
        assert_eq!(r("1e-11"), Rat::new(BigInt::from(1), BigInt::from(10).pow(11)));
        assert_eq!(r("-1.5"), Rat::from_ratio(-3, 2));
        assert_eq!(r("2.5e3"), Rat::from_int(2500));
        assert_eq!(r("0.1"), Rat::from_ratio(1, 10));
        assert_eq!(r("331.4"), Rat::from_ratio(1657, 5));
        assert_eq!(r("+7"), Rat::from_int(7));
        assert!(Rat::from_str("abc").is_err());
        assert!(Rat::from_str("1.2.3").is_err());
        assert!(Rat::from_str("").is_err());
    }

    #[test]
    fn pow2_both_signs() {
        assert_eq!(Rat::pow2(3), Rat::from_int(8));
        assert_eq!(Rat::pow2(-2), Rat::from_ratio(1, 4));
        assert_eq!(Rat::pow2(0), Rat::one());
    }

    #[test]
    fn field_ops_exact() {
        let a = r("1.7");
        let b = r("-3.94");
        assert_eq!(&(&a + &b) - &b, a);
        let third = Rat::from_ratio(1, 3);
        assert_eq!(&(&third + &third) + &third, Rat::one());
    }

    #[test]
    fn f64_roundtrip_and_known_values() {
        // 0.1 rounds to the canonical nearest double.
        let tenth = r("0.1");
        assert_eq!(tenth.to_f64().to_bits(), 0x3FB999999999999Au64);
        // Exactly representable values are exact.
        assert_eq!(r("1.5").to_f64(), 1.5);
        assert_eq!(r("-0.25").to_f64(), -0.25);
        // Round-trip through exact conversion.
        for x in [
            0.1f64,
            -3.7e300,
            5e-324,          // min subnormal
            2.2250738585072014e-308, // min normal
            1.7976931348623157e308,  // max finite
            123456789.123456789,
        ] {
            let rat = Rat::from_f64(x).unwrap();
            assert_eq!(rat.to_f64().to_bits(), x.to_bits(), "roundtrip {x}");
        }
        // Rationals have no signed zero: -0.0 maps to the one zero.
        let neg_zero = Rat::from_f64(-0.0).unwrap();
        assert!(neg_zero.is_zero());
        assert_eq!(neg_zero.to_f64(), 0.0);
    }

    #[test]
    fn f64_overflow_and_midpoints() {
        let huge = r("1e400");
        assert_eq!(huge.to_f64(), f64::INFINITY);
        assert_eq!((-huge).to_f64(), f64::NEG_INFINITY);
        // Midpoint between 1 and 1+ulp rounds to even (1.0).
        let ulp = Rat::pow2(-53);
        let mid = &Rat::one() + &ulp;
        assert_eq!(mid.to_f64(), 1.0);
        // Just above the midpoint rounds up.
        let above = &mid + &Rat::pow2(-80);
        assert_eq!(above.to_f64(), 1.0 + f64::EPSILON);
        // Subnormal underflow: half of min subnormal rounds to zero (ties even).
        let half_min = Rat::pow2(-1075);
        assert_eq!(half_min.to_f64(), 0.0);
        let above_half = &half_min + &Rat::pow2(-1200);
        assert_eq!(above_half.to_f64(), 5e-324);
    }

    #[test]
    fn f32_roundtrip() {
        for x in [0.1f32, -7.25e-30, 1e-45, 3.4028235e38, 1.0] {
            let rat = Rat::from_f32(x).unwrap();
            assert_eq!(rat.to_f32().to_bits(), x.to_bits(), "roundtrip {x}");
        }
        // Rationals have no signed zero: -0.0 maps to the one zero.
        assert!(Rat::from_f32(-0.0).unwrap().is_zero());
        assert_eq!(r("1e40").to_f32(), f32::INFINITY);
    }

    #[test]
    fn ilog2_exact() {
        assert_eq!(r("1").ilog2_floor_abs(), 0);
        assert_eq!(r("1.99").ilog2_floor_abs(), 0);
        assert_eq!(r("2").ilog2_floor_abs(), 1);
        assert_eq!(r("0.5").ilog2_floor_abs(), -1);
        assert_eq!(r("0.4999").ilog2_floor_abs(), -2);
        assert_eq!(r("-12").ilog2_floor_abs(), 3);
    }

    #[test]
    fn dyadic_rounding_directed() {
        let v = Rat::from_ratio(1, 3);
        let lo = v.round_dyadic(64, Dir::Down);
        let hi = v.round_dyadic(64, Dir::Up);
        assert!(lo <= v && v <= hi);
        assert!(&hi - &lo <= Rat::pow2(-64));
        // Negative values mirror.
        let v = Rat::from_ratio(-1, 3);
        let lo = v.round_dyadic(64, Dir::Down);
        let hi = v.round_dyadic(64, Dir::Up);
        assert!(lo <= v && v <= hi);
        // Exact dyadics are unchanged.
        let d = Rat::from_ratio(5, 8);
        assert_eq!(d.round_dyadic(10, Dir::Down), d);
        assert_eq!(d.round_dyadic(10, Dir::Up), d);
    }

    #[test]
    fn decimal_display_directed() {
        let v = Rat::from_ratio(1, 3);
        assert_eq!(v.to_decimal(3, Dir::Down), "3.33e-1");
        assert_eq!(v.to_decimal(3, Dir::Up), "3.34e-1");
        assert_eq!(r("-0.3333").to_decimal(2, Dir::Down), "-3.4e-1");
        assert_eq!(r("-0.3333").to_decimal(2, Dir::Up), "-3.3e-1");
        assert_eq!(r("1e-11").to_decimal(4, Dir::Up), "1.000e-11");
        assert_eq!(Rat::zero().to_decimal(5, Dir::Up), "0");
        // Carry into the next decade.
        assert_eq!(r("0.999999").to_decimal(3, Dir::Up), "1.00");
        assert_eq!(r("9.99999e5").to_decimal(3, Dir::Up), "1.00e6");
    }
}
