//! Affine arithmetic: x0 + sum(xi * eps_i) with eps_i in [-1,1]. Linear
//! operations are exact and preserve correlation (x - x == 0); nonlinear
//! operations enclose their image soundly, pushing the nonlinear residue into
//! one fresh noise term.

use crate::interval::{Interval, IntervalError};
use crate::rational::Rat;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

/// Issues globally unique noise-symbol ids for one analysis run.
#[derive(Debug, Default)]
pub struct NoiseCtx(AtomicU64);

impl NoiseCtx {
    pub fn new() -> NoiseCtx {
        NoiseCtx(AtomicU64::new(0))
    }

    pub fn fresh(&self) -> u64 {
        self.0.fetch_add(1, Ordering::Relaxed)
    }
}

/// x0 + sum of coeff * eps_id terms; terms sorted by id, coefficients nonzero.
#[derive(Clone, PartialEq, Eq)]
pub struct AffineForm {
    pub x0: Rat,
    pub terms: Vec<(u64, Rat)>,
}

impl AffineForm {
    pub fn constant(v: Rat) -> AffineForm {
        AffineForm {
            x0: v,
            terms: Vec::new(),
        }
    }

    pub fn zero() -> AffineForm {
        AffineForm::constant(Rat::zero())
    }

    /// Fresh form covering the interval: mid + half-width * fresh eps.
    pub fn from_interval(iv: &Interval, ctx: &NoiseCtx) -> AffineForm {
        let mid = iv.mid();
        let half = &(iv.width()) * &Rat::from_ratio(1, 2);
        let mut terms = Vec::new();
        if !half.is_zero() {
            terms.push((ctx.fresh(), half));
        }
        AffineForm { x0: mid, terms }
    }

    /// Symmetric error term: 0 +/- bound.
    pub fn symmetric(bound: Rat, ctx: &NoiseCtx) -> AffineForm {
        debug_assert!(!bound.is_negative());
        if bound.is_zero() {
            return AffineForm::zero();
        }
        AffineForm {
            x0: Rat::zero(),
            terms: vec![(ctx.fresh(), bound)],
        }
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    /// Total deviation radius: sum |xi|.
    pub fn rad(&self) -> Rat {
        let mut r = Rat::zero();
        for (_, c) in &self.terms {
            r = &r + &c.abs();
        }
        r
    }

    pub fn to_interval(&self) -> Interval {
        let r = self.rad();
        Interval::new(&self.x0 - &r, &self.x0 + &r)
    }

    pub fn max_abs(&self) -> Rat {
        self.to_interval().max_abs()
    }

    pub fn neg(&self) -> AffineForm {
        AffineForm {
            x0: -&self.x0,
            terms: self.terms.iter().map(|(i, c)| (*i, -c)).collect(),
        }
    }

    pub fn add(&self, o: &AffineForm) -> AffineForm {
        AffineForm {
            x0: &self.x0 + &o.x0,
            terms: merge_terms(&self.terms, &o.terms, false),
        }
    }

    pub fn sub(&self, o: &AffineForm) -> AffineForm {
        AffineForm {
            x0: &self.x0 - &o.x0,
            terms: merge_terms(&self.terms, &o.terms, true),
        }
    }

    pub fn add_const(&self, c: &Rat) -> AffineForm {
        AffineForm {
            x0: &self.x0 + c,
            terms: self.terms.clone(),
        }
    }

    pub fn scale(&self, c: &Rat) -> AffineForm {
        if c.is_zero() {
            return AffineForm::zero();
        }
        AffineForm {
            x0: &self.x0 * c,
            terms: self.terms.iter().map(|(i, k)| (*i, k * c)).collect(),
        }
    }

    /// Full affine multiplication: linear part exact, quadratic residue
    /// rad(a)*rad(b) as one fresh term.
    pub fn mul(&self, o: &AffineForm, ctx: &NoiseCtx) -> AffineForm {
        // (x0 + A)(y0 + B) = x0*y0 + x0*B + y0*A + A*B, |A*B| <= rad_a*rad_b.
        let mut out = o.scale(&self.x0);
        out = out.add(&AffineForm {
            x0: Rat::zero(),
            terms: self.terms.iter().map(|(i, c)| (*i, c * &o.x0)).collect(),
        });
        // out now holds x0*y0 + x0*B + y0*A (the x0*y0 arrived via scale).
        let residue = &self.rad() * &o.rad();
        push_fresh(&mut out, residue, ctx);
        out
    }

    /// Tight square of this exact form. Sign-definite ranges get the
    /// min-range linearization (interval-exact: [lo^2, hi^2]); ranges
    /// straddling zero keep the quadratic residue (sum ai εi)^2 in
    /// [0, rad^2], represented as rad^2/2 + rad^2/2 * fresh.
    pub fn square(&self, ctx: &NoiseCtx) -> AffineForm {
        let iv = self.to_interval();
        if !iv.contains_zero() {
            // alpha = min |slope| = 2 * (endpoint nearer zero); the
            // deviation t^2 - alpha*t is monotone, extremal at endpoints.
            let (lo, hi) = (iv.lo(), iv.hi());
            let alpha = if lo.is_negative() {
                &Rat::from_int(2) * hi
            } else {
                &Rat::from_int(2) * lo
            };
            let d_lo = &lo.square() - &(&alpha * lo);
            let d_hi = &hi.square() - &(&alpha * hi);
            let (dmin, dmax) = if d_lo <= d_hi { (d_lo, d_hi) } else { (d_hi, d_lo) };
            let zeta = &(&dmax + &dmin) * &Rat::from_ratio(1, 2);
            let theta = &(&dmax - &dmin) * &Rat::from_ratio(1, 2);
            let mut out = self.scale(&alpha).add_const(&zeta);
            push_fresh(&mut out, theta, ctx);
            return out;
        }
        let rad = self.rad();
        let rad2 = rad.square();
        let half = &rad2 * &Rat::from_ratio(1, 2);
        let mut out = AffineForm {
            x0: &self.x0.square() + &half,
            terms: self
                .terms
                .iter()
                .map(|(i, c)| (*i, &(&self.x0 + &self.x0) * c))
                .collect(),
        };
        push_fresh(&mut out, half, ctx);
        out
    }

    /// Min-range linear approximation of 1/y; the range of `self` must
    /// exclude zero.
    pub fn inv_minrange(&self, ctx: &NoiseCtx) -> Result<AffineForm, IntervalError> {
        let iv = self.to_interval();
        if iv.contains_zero() {
            return Err(IntervalError::DivisionByZero);
        }
        if iv.lo().is_negative() {
            // 1/y = -(1/(-y)) on a positive interval.
            return Ok(self.neg().inv_minrange(ctx)?.neg());
        }
        let lo = iv.lo();
        let hi = iv.hi();
        // f(y) = 1/y on [lo,hi] > 0: min |f'| at hi, alpha = -1/hi^2.
        let alpha = -&(Rat::one() / &hi.square());
        // Deviation d(y) = 1/y - alpha*y is decreasing on [lo,hi]:
        // d(lo) = 1/lo - alpha*lo (max), d(hi) = 2/hi (min).
        let dmax = &(Rat::one() / lo) - &(&alpha * lo);
        let dmin = &Rat::from_int(2) / hi;
        let zeta = &(&dmax + &dmin) * &Rat::from_ratio(1, 2);
        let theta = &(&dmax - &dmin) * &Rat::from_ratio(1, 2);
        let mut out = self.scale(&alpha).add_const(&zeta);
        push_fresh(&mut out, theta, ctx);
        Ok(out)
    }

    /// Division via multiplication with the min-range inverse.
    pub fn div(&self, o: &AffineForm, ctx: &NoiseCtx) -> Result<AffineForm, IntervalError> {
        let inv = o.inv_minrange(ctx)?;
        Ok(self.mul(&inv, ctx))
    }

    /// Min-range linear approximation of sqrt; the range must be >= 0. The
    /// square roots of the endpoints are themselves outward enclosures, and
    /// the slack is folded into the residue bounds, keeping the result sound.
    pub fn sqrt_minrange(&self, ctx: &NoiseCtx) -> Result<AffineForm, IntervalError> {
        let iv = self.to_interval();
        if iv.lo().is_negative() {
            return Err(IntervalError::NegativeSqrt);
        }
        let s = iv.sqrt()?; // outward: s.lo <= sqrt(lo), s.hi >= sqrt(hi)
        if iv.is_point() {
            // Constant: exact-enough enclosure as center + slack residue.
            let mid = &(s.lo() + s.hi()) * &Rat::from_ratio(1, 2);
            let slack = &(s.hi() - s.lo()) * &Rat::from_ratio(1, 2);
            let mut out = AffineForm::constant(mid);
            push_fresh(&mut out, slack, ctx);
            return Ok(out);
        }
        // alpha = 1/(2*s_hi_up) <= min slope 1/(2 sqrt(hi)); then the
        // deviation d(y) = sqrt(y) - alpha*y is increasing on [lo,hi]:
        //   lower bound of d(lo):  s_lo_down - alpha*lo
        //   upper bound of d(hi):  s_hi_up  - alpha*hi
        let alpha = Rat::one() / &(&Rat::from_int(2) * s.hi());
        let dmin = &(s.lo().clone()) - &(&alpha * iv.lo());
        let dmax = &(s.hi().clone()) - &(&alpha * iv.hi());
        debug_assert!(dmin <= dmax);
        let zeta = &(&dmax + &dmin) * &Rat::from_ratio(1, 2);
        let theta = &(&dmax - &dmin) * &Rat::from_ratio(1, 2);
        let mut out = self.scale(&alpha).add_const(&zeta);
        push_fresh(&mut out, theta, ctx);
        Ok(out)
    }

    /// Enclosure of c * self for c ranging over an interval: the midpoint
    /// scales the form, the half-width times max|self| becomes a fresh term.
    pub fn mul_interval(&self, iv: &Interval, ctx: &NoiseCtx) -> AffineForm {
        let mid = iv.mid();
        let half = &iv.width() * &Rat::from_ratio(1, 2);
        let mut out = self.scale(&mid);
        push_fresh(&mut out, &half * &self.max_abs(), ctx);
        out
    }
}

fn push_fresh(form: &mut AffineForm, radius: Rat, ctx: &NoiseCtx) {
    debug_assert!(!radius.is_negative());
    if !radius.is_zero() {
        form.terms.push((ctx.fresh(), radius));
        // Fresh ids are monotone, so sortedness is preserved.
        debug_assert!(form.terms.windows(2).all(|w| w[0].0 < w[1].0));
    }
}

fn merge_terms(a: &[(u64, Rat)], b: &[(u64, Rat)], subtract: bool) -> Vec<(u64, Rat)> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let take_a = j >= b.len() || (i < a.len() && a[i].0 <= b[j].0);
        let take_b = i >= a.len() || (j < b.len() && b[j].0 <= a[i].0);
        if take_a && take_b {
            let c = if subtract {
                &a[i].1 - &b[j].1
            } else {
                &a[i].1 + &b[j].1
            };
            if !c.is_zero() {
                out.push((a[i].0, c));
            }
            i += 1;
            j += 1;
        } else if take_a {
            out.push(a[i].clone());
            i += 1;
        } else {
            let c = if subtract { -&b[j].1 } else { b[j].1.clone() };
            out.push((b[j].0, c));
            j += 1;
        }
    }
    out
}

impl fmt::Debug for AffineForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.x0)?;
        for (i, c) in &self.terms {
            write!(f, " + {}*e{}", c, i)?;
        }
        Ok(())
    }
}
