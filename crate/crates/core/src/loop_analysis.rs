//! Closed-form error bounds for bounded loops.
//!
//! A loop `x <- f(x)` run `k` times turns per-iteration facts into a bound
//! at the exit: if `K` bounds the Jacobian of the real-valued body over the
//! declared iterate ranges and `σ` bounds one body evaluation's roundoff,
//! the finite-precision trajectory stays within
//!
//! ```text
//!     e_k = K^k λ + (Σ_{i=0}^{k-1} K^i) σ
//! ```
//!
//! of the real one, where `λ` is the initial error. The sum collapses to
//! `(I−K)^{-1}(I−K^k)` when `I−K` is invertible; otherwise the doubling
//! form of the geometric sum is used and the report says so. Everything is
//! exact rational arithmetic on a once-rounded (outward, 128-bit dyadic)
//! copy of `K` and `σ`, so repeated squaring cannot smuggle in rounding
//! error and cannot drag multi-kilobyte rationals through the algebra.
//!
//! The declared per-iterate ranges are an assumption, not a conclusion: we
//! check them against a dyadic interval simulation of the body when the
//! iteration count is small enough to make that cheap, and otherwise trust
//! them with a warning.

use crate::ast::{ExprKey, RcExpr, Sym};
use crate::domain::InputDomain;
use crate::dyadic::DyInterval;
use crate::error_analysis::{
    roundoff_only, AnalysisError, Diagnostic, DiagnosticKind,
};
use crate::frontend::{Body, FunctionDef};
use crate::interval::Interval;
use crate::matrix::RatMatrix;
use crate::precision::{fixed_format_for, FixedRounding, Precision};
use crate::range::RangeEngine;
use crate::rational::{Dir, Rat};
use crate::simulate::dyadic_eval;
use crate::symdiff::bound_jacobian;
use std::collections::BTreeMap;

/// Iteration counts up to this many body evaluations get the dyadic
/// range-preservation check; beyond it the declared ranges are trusted.
const RANGE_CHECK_BUDGET: u64 = 1000;

/// How the declared per-iterate ranges were validated.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RangeCheck {
    /// A k-step interval simulation stayed inside the declared ranges.
    Verified,
    /// Taken on faith, with the reason the check could not conclude.
    Trusted(String),
}

/// Everything the loop analysis concludes about one function.
#[derive(Clone, Debug)]
pub struct LoopReport {
    /// Exact Jacobian bounds of the body over the iterate ranges.
    pub k: RatMatrix,
    /// Exact per-iteration roundoff per state variable, including the
    /// re-quantization of the stored result for fixed-point targets.
    pub sigma: Vec<Rat>,
    /// Total error per state variable after all iterations.
    pub errors: Vec<Rat>,
    /// Guaranteed enclosure of each state variable (the declared ranges).
    pub result_ranges: Vec<Interval>,
    /// Whether the geometric-sum fallback replaced the closed form.
    pub singular: bool,
    pub range_check: RangeCheck,
    pub diagnostics: Vec<Diagnostic>,
}

/// Jacobian bound matrix and per-iteration roundoff vector of a loop body
/// over `domain` (the declared iterate ranges).
pub fn compute_k_sigma(
    engine: &RangeEngine<'_>,
    step: &[RcExpr],
    params: &[Sym],
    domain: &InputDomain,
    prec: Precision,
    rounding: FixedRounding,
) -> Result<(RatMatrix, Vec<Rat>, Vec<Diagnostic>), AnalysisError> {
    let n = params.len();
    let mut k = RatMatrix::zero(n);
    let mut sigma = Vec::with_capacity(n);
    let mut diags = Vec::new();

    for (i, body) in step.iter().enumerate() {
        let flat = body.inline_lets();
        let row = bound_jacobian(engine, &flat, params, domain)?;
        for (j, kij) in row.into_iter().enumerate() {
            k[(i, j)] = kij;
        }

        let (_range, mut s, walk) = roundoff_only(engine, domain, body, prec, rounding)?;
        diags.extend(walk.diagnostics.iter().cloned());
        if let Some(bits) = prec.bit_width().filter(|_| prec.is_fixed()) {
            // The result is stored back into the state variable, whose
            // format comes from the declared range; dropping fraction bits
            // at the store costs one more rounding.
            let store_fmt = fixed_format_for(&domain.boxes[&params[i]], bits, rounding)
                .map_err(|of| AnalysisError::Overflow {
                    node: params[i].to_string(),
                    detail: of.to_string(),
                })?;
            if let Some(result_fmt) = walk.layout.formats.get(&ExprKey(flat.clone())) {
                if result_fmt.frac_bits > store_fmt.frac_bits {
                    let store_err = match rounding {
                        FixedRounding::Truncate => {
                            &Rat::pow2(-store_fmt.frac_bits) - &Rat::pow2(-result_fmt.frac_bits)
                        }
                        FixedRounding::Nearest => Rat::pow2(-(store_fmt.frac_bits + 1)),
                    };
                    s = &s + &store_err;
                }
            }
        }
        sigma.push(s);
    }
    debug_assert!(k.is_nonnegative());
    Ok((k, sigma, diags))
}


/// `e_k` by direct iteration: `e_{m+1} = K e_m + σ`, `e_0 = λ`. Exact.
pub fn iterate_error_unrolled(k: &RatMatrix, sigma: &[Rat], lambda: &[Rat], count: u64) -> Vec<Rat> {
    let mut e: Vec<Rat> = lambda.to_vec();
    for _ in 0..count {
        e = k.mul_vec(&e);
        for (ei, si) in e.iter_mut().zip(sigma) {
            *ei = &*ei + si;
        }
    }
    e
}

/// `e_k` in closed form: `K^k λ + (I−K)^{-1}(I−K^k) σ`, falling back to the
/// doubling geometric sum when `I−K` is singular. The second component of
/// the return says whether the fallback was taken. Exact: equals
/// [`iterate_error_unrolled`] on the same inputs.
pub fn closed_form_error(
    k: &RatMatrix,
    sigma: &[Rat],
    lambda: &[Rat],
    count: u64,
) -> (Vec<Rat>, bool) {
    let n = k.n();
    let ident = RatMatrix::identity(n);
    let k_pow = k.pow(count);
    let head = k_pow.mul_vec(lambda);
    let (sum, singular) = match ident.sub(k).inverse() {
        Some(inv) => (inv.mul(&ident.sub(&k_pow)), false),
        None => (k.geometric_sum(count), true),
    };
    let tail = sum.mul_vec(sigma);
    let e = head
        .into_iter()
        .zip(tail)
        .map(|(h, t)| &h + &t)
        .collect();
    (e, singular)
}

/// Full loop analysis of a lowered function with a `Loop` body: per-state
/// error bounds at the declared iteration count under `prec`, with initial
/// errors `lambda` (missing entries are zero).
pub fn analyze_loop(
    engine: &RangeEngine<'_>,
    fdef: &FunctionDef,
    prec: Precision,
    rounding: FixedRounding,
    lambda: &BTreeMap<Sym, Rat>,
) -> Result<LoopReport, AnalysisError> {
    let Body::Loop { count, step } = &fdef.body else {
        panic!("analyze_loop requires a loop body");
    };
    let params = &fdef.params;

    // K and σ live over the per-iterate ranges: actual where declared
    // (those cover the finite-precision trajectory), real otherwise.
    let mut boxes = BTreeMap::new();
    for p in params {
        let iv = fdef
            .actual_ranges
            .get(p)
            .or_else(|| fdef.real_ranges.get(p))
            .expect("lowering guarantees a range per parameter");
        boxes.insert(p.clone(), iv.clone());
    }
    // Disjunctive preconditions cannot narrow one box soundly; dropping a
    // constraint only widens the analysis.
    let mut constraints = Vec::new();
    for p in &fdef.extra {
        let mut dnf = p.to_dnf();
        if dnf.len() == 1 {
            constraints.extend(dnf.pop().unwrap());
        }
    }
    let domain = InputDomain::new(params.clone(), boxes, constraints);

    let (k, sigma, mut diagnostics) =
        compute_k_sigma(engine, step, params, &domain, prec, rounding)?;

    // One outward rounding before any powering: keeps every later product
    // exact over short dyadics. Sound because e_k is entrywise monotone in
    // K, σ, and λ (all nonnegative).
    let mut k_r = RatMatrix::zero(k.n());
    for i in 0..k.n() {
        for j in 0..k.n() {
            k_r[(i, j)] = k[(i, j)].round_dyadic(128, Dir::Up);
        }
    }
    let sigma_r: Vec<Rat> = sigma.iter().map(|s| s.round_dyadic(128, Dir::Up)).collect();
    let lambda_vec: Vec<Rat> = params
        .iter()
        .map(|p| lambda.get(p).cloned().unwrap_or_else(Rat::zero))
        .collect();

    let (errors, singular) = closed_form_error(&k_r, &sigma_r, &lambda_vec, *count);
    if singular {
        diagnostics.push(Diagnostic::new(
            DiagnosticKind::SingularIteration,
            "I - K is singular; error accumulated by geometric sum instead of the closed form",
        ));
    }

    let range_check = check_ranges(step, params, &domain, *count);
    match &range_check {
        RangeCheck::Verified => diagnostics.push(Diagnostic::new(
            DiagnosticKind::LoopRangeVerified,
            format!("iterate ranges verified by {count}-step interval simulation"),
        )),
        RangeCheck::Trusted(why) => diagnostics.push(Diagnostic::new(
            DiagnosticKind::LoopRangeTrusted,
            format!("iterate ranges taken on faith: {why}"),
        )),
    }

    let result_ranges = params.iter().map(|p| domain.boxes[p].clone()).collect();
    Ok(LoopReport {
        k,
        sigma,
        errors,
        result_ranges,
        singular,
        range_check,
        diagnostics,
    })
}

/// Try to confirm that the declared ranges absorb `count` body steps, by
/// outward interval iteration from the full declared boxes. Interval
/// wrapping makes false alarms possible but never false confirmations.
fn check_ranges(
    step: &[RcExpr],
    params: &[Sym],
    domain: &InputDomain,
    count: u64,
) -> RangeCheck {
    if count > RANGE_CHECK_BUDGET {
        return RangeCheck::Trusted(format!(
            "iteration count {count} above the {RANGE_CHECK_BUDGET}-step simulation budget"
        ));
    }
    let mut cur: BTreeMap<Sym, DyInterval> = params
        .iter()
        .map(|p| {
            let iv = &domain.boxes[p];
            (p.clone(), DyInterval::from_rats(iv.lo(), iv.hi()))
        })
        .collect();
    for it in 0..count {
        let mut next = BTreeMap::new();
        for (p, body) in params.iter().zip(step) {
            match dyadic_eval(body, &cur) {
                Ok(v) => {
                    let iv = &domain.boxes[p];
                    if &v.lo_rat() < iv.lo() || &v.hi_rat() > iv.hi() {
                        return RangeCheck::Trusted(format!(
                            "interval simulation leaves the declared range of `{p}` at step {}",
                            it + 1
                        ));
                    }
                    next.insert(p.clone(), v);
                }
                Err(e) => {
                    return RangeCheck::Trusted(format!(
                        "interval simulation failed at step {}: {e}",
                        it + 1
                    ))
                }
            }
        }
        cur = next;
    }
    RangeCheck::Verified
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certify::BuiltinCertifier;
    use crate::frontend::Program;
    use crate::range::RangeConfig;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn q(n: i64, d: i64) -> Rat {
        Rat::from_ratio(n, d)
    }

    fn analyze(src: &str, prec: Precision) -> LoopReport {
        let prog = Program::parse(src).unwrap();
        let f = &prog.functions[0];
        let cert = BuiltinCertifier;
        let eng = RangeEngine::new(&cert, RangeConfig::default());
        analyze_loop(&eng, f, prec, FixedRounding::Truncate, &f.initial_errors).unwrap()
    }

    #[test]
    fn unrolled_hand_value() {
        // K=[1/2], sigma=[1], lambda=[0], k=3: 1, 3/2, 7/4.
        let k = RatMatrix::from_rows(vec![vec![q(1, 2)]]);
        let e = iterate_error_unrolled(&k, &[q(1, 1)], &[Rat::zero()], 3);
        assert_eq!(e, vec![q(7, 4)]);
        let (c, singular) = closed_form_error(&k, &[q(1, 1)], &[Rat::zero()], 3);
        assert_eq!(c, vec![q(7, 4)]);
        assert!(!singular);
    }

    #[test]
    fn zero_k_yields_sigma() {
        let k = RatMatrix::zero(2);
        let sigma = [q(3, 7), q(1, 9)];
        let lambda = [q(5, 1), q(5, 1)];
        for steps in 1..5 {
            let e = iterate_error_unrolled(&k, &sigma, &lambda, steps);
            assert_eq!(e, sigma.to_vec());
        }
    }

    #[test]
    fn closed_form_matches_unrolled() {
        let mut rng = StdRng::seed_from_u64(23);
        for _ in 0..40 {
            let n = rng.gen_range(1..=3);
            let mut k = RatMatrix::zero(n);
            for i in 0..n {
                for j in 0..n {
                    k[(i, j)] = q(rng.gen_range(0..=6), rng.gen_range(1..=8));
                }
            }
            let sigma: Vec<Rat> = (0..n).map(|_| q(rng.gen_range(0..=9), 7)).collect();
            let lambda: Vec<Rat> = (0..n).map(|_| q(rng.gen_range(0..=9), 11)).collect();
            let steps = rng.gen_range(0..=30u64);
            let (c, _) = closed_form_error(&k, &sigma, &lambda, steps);
            assert_eq!(c, iterate_error_unrolled(&k, &sigma, &lambda, steps));
        }
    }

    #[test]
    fn singular_iteration_falls_back() {
        // K = [1]: e_k = lambda + k sigma, via the geometric sum.
        let k = RatMatrix::from_rows(vec![vec![q(1, 1)]]);
        let (e, singular) = closed_form_error(&k, &[q(1, 100)], &[q(1, 2)], 10);
        assert!(singular);
        assert_eq!(e, vec![&q(1, 2) + &q(10, 100)]);
    }

    #[test]
    fn identity_loop_keeps_initial_error() {
        let rep = analyze(
            r#"
def hold(t: Real, n: Int): Real = {
  require(0.0 <= t && t <= 1.0 && t +/- 0.125)
  if (n < 10) { hold(t, n + 1) } else { t }
}
"#,
            Precision::Float64,
        );
        assert_eq!(rep.k[(0, 0)], Rat::one());
        assert!(rep.singular);
        assert_eq!(rep.sigma, vec![Rat::zero()]);
        assert_eq!(rep.errors, vec![q(1, 8)]);
        assert_eq!(rep.range_check, RangeCheck::Verified);
    }

    #[test]
    fn contractive_body_has_half_k() {
        let rep = analyze(
            r#"
def decay(x: Real, n: Int): Real = {
  require(-1.0 <= x && x <= 1.0)
  if (n < 20) { decay(x / 2.0, n + 1) } else { x }
}
"#,
            Precision::Float64,
        );
        assert_eq!(rep.k[(0, 0)], q(1, 2));
        assert!(!rep.singular);
        assert_eq!(rep.range_check, RangeCheck::Verified);
        // sigma is one division's roundoff; 20 iterations stay below the
        // geometric limit 2 sigma.
        let limit = &q(2, 1) * &rep.sigma[0];
        assert!(rep.errors[0] <= limit);
        assert!(rep.errors[0] > Rat::zero());
    }

    #[test]
    fn escaping_simulation_warns_but_proceeds() {
        let rep = analyze(
            r#"
def grow(x: Real, n: Int): Real = {
  require(-1.0 <= x && x <= 1.0)
  if (n < 5) { grow(2.0 * x, n + 1) } else { x }
}
"#,
            Precision::Float64,
        );
        assert!(matches!(&rep.range_check, RangeCheck::Trusted(why)
            if why.contains("step 1")));
        assert!(rep
            .diagnostics
            .iter()
            .any(|d| d.kind == DiagnosticKind::LoopRangeTrusted));
        // The analysis itself still concludes, using the declared ranges.
        assert_eq!(rep.k[(0, 0)], q(2, 1));
    }

    #[test]
    fn long_counts_skip_the_simulation() {
        let rep = analyze(
            r#"
def decay(x: Real, n: Int): Real = {
  require(-1.0 <= x && x <= 1.0)
  if (n < 5000) { decay(x / 2.0, n + 1) } else { x }
}
"#,
            Precision::Float64,
        );
        assert!(matches!(&rep.range_check, RangeCheck::Trusted(why)
            if why.contains("budget")));
    }

    #[test]
    fn fixed_store_requantizes() {
        // x/2 lands in a finer format (f=15) than the state keeps (f=14):
        // sigma = 2^-15 (division) + 2^-15 (store) exactly.
        let rep = analyze(
            r#"
def decay(x: Real, n: Int): Real = {
  require(0.0 <= x && x <= 1.0)
  if (n < 4) { decay(x / 2.0, n + 1) } else { x }
}
"#,
            Precision::Fixed16,
        );
        assert_eq!(rep.sigma, vec![Rat::pow2(-14)]);
    }

    #[test]
    fn two_state_coupling() {
        let rep = analyze(
            r#"
def swirl(x: Real, y: Real, n: Int): (Real, Real) = {
  require(-1.0 <= x && x <= 1.0 && -1.0 <= y && y <= 1.0)
  if (n < 8) { swirl(x / 2.0 + y / 4.0, y / 2.0, n + 1) } else { (x, y) }
}
"#,
            Precision::Float64,
        );
        assert_eq!(rep.k[(0, 0)], q(1, 2));
        assert_eq!(rep.k[(0, 1)], q(1, 4));
        assert_eq!(rep.k[(1, 0)], Rat::zero());
        assert_eq!(rep.k[(1, 1)], q(1, 2));
        assert_eq!(rep.range_check, RangeCheck::Verified);
    }
}
