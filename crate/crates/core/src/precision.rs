//! Finite-precision descriptors: the candidate machine arithmetics, their
//! unit roundoffs, and fixed-point format inference.

use crate::interval::Interval;
use crate::rational::Rat;
use num_bigint::BigInt;
use serde::Serialize;
use std::fmt;
use thiserror::Error;

/// Candidate arithmetic, cheapest first in the default search order.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug, Hash, Serialize)]
pub enum Precision {
    Fixed8,
    Fixed16,
    Fixed32,
    Float32,
    Float64,
    DoubleDouble,
    QuadDouble,
}

impl Precision {
    /// The default candidate order (cheapest to most expensive).
    pub fn default_order() -> Vec<Precision> {
        use Precision::*;
        vec![Fixed8, Fixed16, Fixed32, Float32, Float64, DoubleDouble, QuadDouble]
    }

    pub fn parse(s: &str) -> Option<Precision> {
        use Precision::*;
        Some(match s.trim() {
            "fixed8" => Fixed8,
            "fixed16" => Fixed16,
            "fixed32" => Fixed32,
            "float32" => Float32,
            "float64" => Float64,
            "dd" => DoubleDouble,
            "qd" => QuadDouble,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        use Precision::*;
        match self {
            Fixed8 => "fixed8",
            Fixed16 => "fixed16",
            Fixed32 => "fixed32",
            Float32 => "float32",
            Float64 => "float64",
            DoubleDouble => "dd",
            QuadDouble => "qd",
        }
    }

    pub fn is_fixed(&self) -> bool {
        matches!(self, Precision::Fixed8 | Precision::Fixed16 | Precision::Fixed32)
    }

    pub fn is_float(&self) -> bool {
        !self.is_fixed()
    }

    /// Fixed-point total bit width.
    pub fn bit_width(&self) -> Option<u32> {
        match self {
            Precision::Fixed8 => Some(8),
            Precision::Fixed16 => Some(16),
            Precision::Fixed32 => Some(32),
            _ => None,
        }
    }

    /// Unit roundoff delta: one rounding's relative error bound (floats only).
    pub fn unit_roundoff(&self) -> Option<Rat> {
        let k = match self {
            Precision::Float32 => -24,
            Precision::Float64 => -53,
            Precision::DoubleDouble => -105,
            Precision::QuadDouble => -211,
            _ => return None,
        };
        Some(Rat::pow2(k))
    }

    /// Smallest positive normal magnitude (floats only).
    pub fn min_normal(&self) -> Option<Rat> {
        match self {
            Precision::Float32 => Some(Rat::pow2(-126)),
            Precision::Float64 | Precision::DoubleDouble | Precision::QuadDouble => {
                Some(Rat::pow2(-1022))
            }
            _ => None,
        }
    }

    /// Absolute rounding-error floor in the subnormal range: half an ulp of
    /// the smallest subnormal step. Added to every float rounding bound so
    /// results near zero stay covered.
    pub fn subnormal_eta(&self) -> Option<Rat> {
        match self {
            Precision::Float32 => Some(Rat::pow2(-150)),
            Precision::Float64 | Precision::DoubleDouble | Precision::QuadDouble => {
                Some(Rat::pow2(-1075))
            }
            _ => None,
        }
    }

    /// Largest finite magnitude (floats only); exceeding it is an overflow
    /// diagnostic.
    pub fn max_finite(&self) -> Option<Rat> {
        match self {
            Precision::Float32 => {
                // (2 - 2^-23) * 2^127
                Some(&(&Rat::from_int(2) - &Rat::pow2(-23)) * &Rat::pow2(127))
            }
            Precision::Float64 | Precision::DoubleDouble | Precision::QuadDouble => {
                Some(&(&Rat::from_int(2) - &Rat::pow2(-52)) * &Rat::pow2(1023))
            }
            _ => None,
        }
    }

    /// Whether a bit-exact simulator exists for this precision (dd/qd are
    /// analysis-only).
    pub fn simulable(&self) -> bool {
        !matches!(self, Precision::DoubleDouble | Precision::QuadDouble)
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Fixed-point quantization rounding semantics.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub enum FixedRounding {
    /// Truncation (round toward zero / plain shifts): error < 2^-f.
    #[default]
    Truncate,
    /// Round to nearest (shift with carry-in): error <= 2^-(f+1).
    Nearest,
}

/// Signed fixed-point format: integers scaled by 2^-frac_bits.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct FixedFormat {
    pub total_bits: u32,
    pub frac_bits: i64,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("fixed-point overflow: range [{lo}, {hi}] does not fit {bits} signed bits at any f >= 0")]
pub struct FixedOverflow {
    pub lo: String,
    pub hi: String,
    pub bits: u32,
}

impl FixedFormat {
    /// Quantization error bound of one store into this format.
    pub fn quantization_error(&self, mode: FixedRounding) -> Rat {
        match mode {
            FixedRounding::Truncate => Rat::pow2(-self.frac_bits),
            FixedRounding::Nearest => Rat::pow2(-(self.frac_bits + 1)),
        }
    }

    pub fn min_int(&self) -> BigInt {
        -(BigInt::from(1) << (self.total_bits - 1))
    }

    pub fn max_int(&self) -> BigInt {
        (BigInt::from(1) << (self.total_bits - 1)) - 1
    }

    /// The integer representation of `v` in this format under `mode`.
    pub fn repr_int(&self, v: &Rat, mode: FixedRounding) -> BigInt {
        let scaled = v * &Rat::pow2(self.frac_bits);
        match mode {
            FixedRounding::Truncate => scaled.trunc_bigint(),
            FixedRounding::Nearest => {
                // Round half away from zero, symmetric in sign.
                let half = Rat::from_ratio(1, 2);
                if scaled.is_negative() {
                    -(&(&scaled.abs() + &half)).floor_bigint()
                } else {
                    (&scaled + &half).floor_bigint()
                }
            }
        }
    }

    /// The rational value back from an integer representation.
    pub fn value_of(&self, i: &BigInt) -> Rat {
        &Rat::from_bigint(i.clone()) * &Rat::pow2(-self.frac_bits)
    }

    /// Whether every value in the range is representable without overflow.
    pub fn fits(&self, range: &Interval, mode: FixedRounding) -> bool {
        let lo = self.repr_int(range.lo(), mode);
        let hi = self.repr_int(range.hi(), mode);
        lo >= self.min_int() && hi <= self.max_int()
    }
}

/// Safety cap on fractional bits so shift distances stay practical for
/// near-zero ranges; generous enough never to bind on realistic programs.
fn max_frac_bits(bits: u32) -> i64 {
    8 * bits as i64
}

/// Best (largest-f) fixed-point format holding the whole range, f >= 0.
pub fn fixed_format_for(
    range: &Interval,
    bits: u32,
    mode: FixedRounding,
) -> Result<FixedFormat, FixedOverflow> {
    let overflow = || FixedOverflow {
        lo: range.lo().to_decimal(6, crate::rational::Dir::Down),
        hi: range.hi().to_decimal(6, crate::rational::Dir::Up),
        bits,
    };
    let max_abs = range.max_abs();
    if max_abs.is_zero() {
        // Degenerate zero range: any f works; pick a stable convention.
        return Ok(FixedFormat {
            total_bits: bits,
            frac_bits: 2 * bits as i64,
        });
    }
    // f_candidate ~ (bits-1) - ceil(log2 maxAbs); probe exactly around it.
    let guess = (bits as i64 - 1) - (max_abs.ilog2_floor_abs() + 1);
    let cap = max_frac_bits(bits);
    let mut f = guess.clamp(0, cap);
    let mk = |f| FixedFormat {
        total_bits: bits,
        frac_bits: f,
    };
    if mk(f).fits(range, mode) {
        while f < cap && mk(f + 1).fits(range, mode) {
            f += 1;
        }
        Ok(mk(f))
    } else {
        while f > 0 {
            f -= 1;
            if mk(f).fits(range, mode) {
                return Ok(mk(f));
            }
        }
        Err(overflow())
    }
}
