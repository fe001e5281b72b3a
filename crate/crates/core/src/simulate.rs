//! Reference evaluators: exact rational, outward dyadic-interval, and
//! bit-true binary floating point.
//!
//! The rational evaluator is the ground-truth semantics for sqrt-free
//! programs; the dyadic-interval evaluator provides arbitrarily tight
//! enclosures when square roots make exact evaluation impossible. The float
//! evaluators implement what emitted code executes, operation for operation.

use crate::ast::{Cond, ExprKind, RcExpr, RelOp, Sym};
use crate::dyadic::{DyError, DyInterval};
use crate::rational::Rat;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("division by zero during evaluation")]
    DivisionByZero,
    #[error("square root of a negative value during evaluation")]
    NegativeSqrt,
    #[error("value is irrational (square root); exact evaluation impossible")]
    Inexact,
    #[error("unbound variable `{0}` during evaluation")]
    Unbound(String),
}

/// Exact rational evaluation. Square roots succeed only for perfect rational
/// squares; otherwise `Inexact` tells the caller to use enclosures.
pub fn rational_eval(e: &RcExpr, env: &BTreeMap<Sym, Rat>) -> Result<Rat, EvalError> {
    let mut scope: Vec<(Sym, Rat)> = Vec::new();
    fn go(
        e: &RcExpr,
        env: &BTreeMap<Sym, Rat>,
        scope: &mut Vec<(Sym, Rat)>,
    ) -> Result<Rat, EvalError> {
        match &e.kind {
            ExprKind::Var(v) => scope
                .iter()
                .rev()
                .find(|(n, _)| n == v)
                .map(|(_, x)| x.clone())
                .or_else(|| env.get(v).cloned())
                .ok_or_else(|| EvalError::Unbound(v.to_string())),
            ExprKind::Const(c) => Ok(c.clone()),
            ExprKind::Add(a, b) => Ok(&go(a, env, scope)? + &go(b, env, scope)?),
            ExprKind::Sub(a, b) => Ok(&go(a, env, scope)? - &go(b, env, scope)?),
            ExprKind::Mul(a, b) => Ok(&go(a, env, scope)? * &go(b, env, scope)?),
            ExprKind::Div(a, b) => {
                let d = go(b, env, scope)?;
                if d.is_zero() {
                    return Err(EvalError::DivisionByZero);
                }
                Ok(&go(a, env, scope)? / &d)
            }
            ExprKind::Sqrt(a) => {
                let x = go(a, env, scope)?;
                if x.is_negative() {
                    return Err(EvalError::NegativeSqrt);
                }
                exact_sqrt_rat(&x).ok_or(EvalError::Inexact)
            }
            ExprKind::Let { name, value, body } => {
                let v = go(value, env, scope)?;
                scope.push((name.clone(), v));
                let r = go(body, env, scope);
                scope.pop();
                r
            }
            ExprKind::Call(f, _) => Err(EvalError::Unbound(format!("call to `{f}`"))),
        }
    }
    go(e, env, &mut scope)
}

fn exact_sqrt_rat(v: &Rat) -> Option<Rat> {
    if v.is_zero() {
        return Some(Rat::zero());
    }
    let ns = v.numer().magnitude().sqrt();
    let ds = v.denom().magnitude().sqrt();
    if &(&ns * &ns) == v.numer().magnitude() && &(&ds * &ds) == v.denom().magnitude() {
        Some(Rat::new(ns.into(), ds.into()))
    } else {
        None
    }
}

/// Outward-rounded interval evaluation in 256-bit dyadic arithmetic: the
/// result interval always contains the exact real value.
pub fn dyadic_eval(
    e: &RcExpr,
    env: &BTreeMap<Sym, DyInterval>,
) -> Result<DyInterval, EvalError> {
    let mut scope: Vec<(Sym, DyInterval)> = Vec::new();
    fn go(
        e: &RcExpr,
        env: &BTreeMap<Sym, DyInterval>,
        scope: &mut Vec<(Sym, DyInterval)>,
    ) -> Result<DyInterval, EvalError> {
        match &e.kind {
            ExprKind::Var(v) => scope
                .iter()
                .rev()
                .find(|(n, _)| n == v)
                .map(|(_, x)| x.clone())
                .or_else(|| env.get(v).cloned())
                .ok_or_else(|| EvalError::Unbound(v.to_string())),
            ExprKind::Const(c) => Ok(DyInterval::point_rat(c)),
            ExprKind::Add(a, b) => Ok(go(a, env, scope)?.add(&go(b, env, scope)?)),
            ExprKind::Sub(a, b) => Ok(go(a, env, scope)?.sub(&go(b, env, scope)?)),
            ExprKind::Mul(a, b) => Ok(go(a, env, scope)?.mul(&go(b, env, scope)?)),
            ExprKind::Div(a, b) => go(a, env, scope)?
                .div(&go(b, env, scope)?)
                .map_err(EvalError::from),
            ExprKind::Sqrt(a) => go(a, env, scope)?.sqrt().map_err(EvalError::from),
            ExprKind::Let { name, value, body } => {
                let v = go(value, env, scope)?;
                scope.push((name.clone(), v));
                let r = go(body, env, scope);
                scope.pop();
                r
            }
            ExprKind::Call(f, _) => Err(EvalError::Unbound(format!("call to `{f}`"))),
        }
    }
    go(e, env, &mut scope)
}

impl From<DyError> for EvalError {
    fn from(e: DyError) -> EvalError {
        match e {
            DyError::DivisionByZero => EvalError::DivisionByZero,
            DyError::NegativeSqrt => EvalError::NegativeSqrt,
        }
    }
}

/// Evaluate at a rational point with tight enclosures: exact when the
/// expression is sqrt-free, dyadic otherwise.
pub fn point_enclosure(
    e: &RcExpr,
    env: &BTreeMap<Sym, Rat>,
) -> Result<DyInterval, EvalError> {
    match rational_eval(e, env) {
        Ok(v) => Ok(DyInterval::point_rat(&v)),
        Err(EvalError::Inexact) => {
            let denv: BTreeMap<Sym, DyInterval> = env
                .iter()
                .map(|(k, v)| (k.clone(), DyInterval::point_rat(v)))
                .collect();
            dyadic_eval(e, &denv)
        }
        Err(other) => Err(other),
    }
}

/// Conservative truth of a comparison at a rational point: `Some(b)` only
/// when the enclosure decides it; `None` when too tight to call.
pub fn cond_holds_at(cond: &Cond, env: &BTreeMap<Sym, Rat>) -> Option<bool> {
    let diff = cond.boundary_expr(); // lhs - rhs
    let enc = match point_enclosure(&diff, env) {
        Ok(i) => i,
        Err(_) => return Some(false), // undefined point satisfies nothing
    };
    let lo = enc.lo_rat();
    let hi = enc.hi_rat();
    match cond.op {
        RelOp::Lt => {
            if hi.is_negative() {
                Some(true)
            } else if !lo.is_negative() {
                Some(false)
            } else {
                None
            }
        }
        RelOp::Le => {
            if !hi.is_positive() {
                Some(true)
            } else if lo.is_positive() {
                Some(false)
            } else {
                None
            }
        }
        RelOp::Gt => {
            if lo.is_positive() {
                Some(true)
            } else if !hi.is_positive() {
                Some(false)
            } else {
                None
            }
        }
        RelOp::Ge => {
            if !lo.is_negative() {
                Some(true)
            } else if hi.is_negative() {
                Some(false)
            } else {
                None
            }
        }
    }
}

/// Bit-true IEEE double evaluation (round-to-nearest-even, the hardware
/// default). NaN/inf propagate as in hardware.
pub fn simulate_f64(e: &RcExpr, env: &BTreeMap<Sym, f64>) -> Result<f64, EvalError> {
    let mut scope: Vec<(Sym, f64)> = Vec::new();
    fn go(
        e: &RcExpr,
        env: &BTreeMap<Sym, f64>,
        scope: &mut Vec<(Sym, f64)>,
    ) -> Result<f64, EvalError> {
        match &e.kind {
            ExprKind::Var(v) => scope
                .iter()
                .rev()
                .find(|(n, _)| n == v)
                .map(|(_, x)| *x)
                .or_else(|| env.get(v).copied())
                .ok_or_else(|| EvalError::Unbound(v.to_string())),
            ExprKind::Const(c) => Ok(c.to_f64()),
            ExprKind::Add(a, b) => Ok(go(a, env, scope)? + go(b, env, scope)?),
            ExprKind::Sub(a, b) => Ok(go(a, env, scope)? - go(b, env, scope)?),
            ExprKind::Mul(a, b) => Ok(go(a, env, scope)? * go(b, env, scope)?),
            ExprKind::Div(a, b) => Ok(go(a, env, scope)? / go(b, env, scope)?),
            ExprKind::Sqrt(a) => Ok(go(a, env, scope)?.sqrt()),
            ExprKind::Let { name, value, body } => {
                let v = go(value, env, scope)?;
                scope.push((name.clone(), v));
                let r = go(body, env, scope);
                scope.pop();
                r
            }
            ExprKind::Call(f, _) => Err(EvalError::Unbound(format!("call to `{f}`"))),
        }
    }
    go(e, env, &mut scope)
}

/// Bit-true IEEE single evaluation: every operation rounds to f32.
pub fn simulate_f32(e: &RcExpr, env: &BTreeMap<Sym, f32>) -> Result<f32, EvalError> {
    let mut scope: Vec<(Sym, f32)> = Vec::new();
    fn go(
        e: &RcExpr,
        env: &BTreeMap<Sym, f32>,
        scope: &mut Vec<(Sym, f32)>,
    ) -> Result<f32, EvalError> {
        match &e.kind {
            ExprKind::Var(v) => scope
                .iter()
                .rev()
                .find(|(n, _)| n == v)
                .map(|(_, x)| *x)
                .or_else(|| env.get(v).copied())
                .ok_or_else(|| EvalError::Unbound(v.to_string())),
            ExprKind::Const(c) => Ok(c.to_f32()),
            ExprKind::Add(a, b) => Ok(go(a, env, scope)? + go(b, env, scope)?),
            ExprKind::Sub(a, b) => Ok(go(a, env, scope)? - go(b, env, scope)?),
            ExprKind::Mul(a, b) => Ok(go(a, env, scope)? * go(b, env, scope)?),
            ExprKind::Div(a, b) => Ok(go(a, env, scope)? / go(b, env, scope)?),
            ExprKind::Sqrt(a) => Ok(go(a, env, scope)?.sqrt()),
            ExprKind::Let { name, value, body } => {
                let v = go(value, env, scope)?;
                scope.push((name.clone(), v));
                let r = go(body, env, scope);
                scope.pop();
                r
            }
            ExprKind::Call(f, _) => Err(EvalError::Unbound(format!("call to `{f}`"))),
        }
    }
    go(e, env, &mut scope)
}

/// Absolute difference |float result - real result| as an exact rational,
/// via a dyadic enclosure of the real value. Returns the worst (largest)
/// difference consistent with the enclosure, so measured errors are never
/// understated.
pub fn abs_error_vs_real(
    float_value: &Rat,
    real_enclosure: &DyInterval,
) -> Rat {
    let lo = real_enclosure.lo_rat();
    let hi = real_enclosure.hi_rat();
    let d1 = (float_value - &lo).abs();
    let d2 = (float_value - &hi).abs();
    Rat::max_of(&d1, &d2)
}

/// Conservative *lower* bound on |float - real| given only an enclosure of
/// the real value: zero if the float lies inside the enclosure. A reported
/// violation based on this bound is a genuine violation.
pub fn min_abs_error_vs_real(float_value: &Rat, real_enclosure: &DyInterval) -> Rat {
    let lo = real_enclosure.lo_rat();
    let hi = real_enclosure.hi_rat();
    if float_value < &lo {
        &lo - float_value
    } else if float_value > &hi {
        float_value - &hi
    } else {
        Rat::zero()
    }
}

/// Interval-iterate a loop body `count` times from dyadic starting boxes.
/// Used by soundness campaigns to get a guaranteed enclosure of real-valued
/// trajectories.
pub fn dyadic_trajectory(
    steps: &[RcExpr],
    state_vars: &[Sym],
    start: &BTreeMap<Sym, DyInterval>,
    count: u64,
) -> Result<BTreeMap<Sym, DyInterval>, EvalError> {
    let mut cur = start.clone();
    for _ in 0..count {
        let mut next = BTreeMap::new();
        for (v, step) in state_vars.iter().zip(steps) {
            next.insert(v.clone(), dyadic_eval(step, &cur)?);
        }
        cur = next;
    }
    Ok(cur)
}

/// Dyadic interval from a rational point (width zero).
pub fn dy_point(v: &Rat) -> DyInterval {
    DyInterval::point_rat(v)
}

/// Dyadic interval from exact rational endpoints.
pub fn dy_range(lo: &Rat, hi: &Rat) -> DyInterval {
    DyInterval::from_rats(lo, hi)
}

#[allow(unused_imports)]
pub use crate::dyadic::PRECISION as DYADIC_PRECISION;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_expr;
    use std::sync::Arc;

    fn env1(v: &str) -> BTreeMap<Sym, Rat> {
        let mut m = BTreeMap::new();
        m.insert(Arc::from("x") as Sym, v.parse().unwrap());
        m
    }

    #[test]
    fn rational_eval_exact() {
        let e = parse_expr("x - x*x*x/6.0").unwrap();
        let r = rational_eval(&e, &env1("0.5")).unwrap();
        // 0.5 - 0.125/6 = 0.5 - 1/48 = 23/48
        assert_eq!(r, Rat::from_ratio(23, 48));
    }

    #[test]
    fn rational_eval_sqrt_perfect_square() {
        let e = parse_expr("sqrt(x * x)").unwrap();
        assert_eq!(rational_eval(&e, &env1("1.5")).unwrap(), "1.5".parse().unwrap());
        let e = parse_expr("sqrt(x)").unwrap();
        assert_eq!(rational_eval(&e, &env1("2")), Err(EvalError::Inexact));
    }

    #[test]
    fn rational_eval_div_zero() {
        let e = parse_expr("1.0 / (x - x)").unwrap();
        assert_eq!(rational_eval(&e, &env1("3")), Err(EvalError::DivisionByZero));
    }

    #[test]
    fn dyadic_eval_encloses_exact() {
        let e = parse_expr("(x + 1.0) * (x - 2.0) / 3.0").unwrap();
        let exact = rational_eval(&e, &env1("0.7")).unwrap();
        let mut denv = BTreeMap::new();
        denv.insert(
            Arc::from("x") as Sym,
            DyInterval::point_rat(&"0.7".parse().unwrap()),
        );
        let enc = dyadic_eval(&e, &denv).unwrap();
        assert!(enc.lo_rat() <= exact && exact <= enc.hi_rat());
        // enclosure is tight: width below 2^-200
        assert!(&enc.hi_rat() - &enc.lo_rat() < Rat::pow2(-200));
    }

    #[test]
    fn sqrt_enclosure_tight() {
        let e = parse_expr("sqrt(2.0)").unwrap();
        let enc = dyadic_eval(&e, &BTreeMap::new()).unwrap();
        let lo = enc.lo_rat();
        let hi = enc.hi_rat();
        assert!(&lo.square() <= &"2".parse().unwrap());
        assert!(&hi.square() >= &"2".parse().unwrap());
        assert!(&hi - &lo < Rat::pow2(-200));
    }

    #[test]
    fn cond_holds_decides() {
        use crate::ast::{Cond, Expr, RelOp};
        let c = Cond::new(
            parse_expr("x * x").unwrap(),
            RelOp::Lt,
            Expr::konst(Rat::from_int(2)),
        );
        assert_eq!(cond_holds_at(&c, &env1("1")), Some(true));
        assert_eq!(cond_holds_at(&c, &env1("2")), Some(false));
        // boundary: sqrt(2)^2 vs 2 — here exact rational, decidable
        assert_eq!(cond_holds_at(&c, &env1("1.41")), Some(true));
    }

    #[test]
    fn f64_simulation_rounds_per_op() {
        let e = parse_expr("(0.1 + 0.2) + x").unwrap();
        let mut env = BTreeMap::new();
        env.insert(Arc::from("x") as Sym, 0.0f64);
        let got = simulate_f64(&e, &env).unwrap();
        assert_eq!(got, 0.1f64 + 0.2f64);
        // and that differs from the real value 0.3
        let real: Rat = "0.3".parse().unwrap();
        assert_ne!(Rat::from_f64(got).unwrap(), real);
    }

    #[test]
    fn trajectory_interval_growth_is_bounded() {
        // x' = 0.5 x stays in [0, 1]
        let step = parse_expr("x * 0.5").unwrap();
        let mut start = BTreeMap::new();
        start.insert(
            Arc::from("x") as Sym,
            dy_range(&Rat::zero(), &Rat::one()),
        );
        let out = dyadic_trajectory(
            &[step],
            &[Arc::from("x") as Sym],
            &start,
            50,
        )
        .unwrap();
        let hi = out[&(Arc::from("x") as Sym)].hi_rat();
        assert!(hi <= Rat::pow2(-49), "hi = {hi:?}");
    }

    #[test]
    fn measured_error_helpers() {
        let enc = dy_range(&"1.0".parse().unwrap(), &"1.5".parse().unwrap());
        let f: Rat = "2.0".parse().unwrap();
        assert_eq!(min_abs_error_vs_real(&f, &enc), "0.5".parse().unwrap());
        assert_eq!(abs_error_vs_real(&f, &enc), "1.0".parse().unwrap());
        let inside: Rat = "1.2".parse().unwrap();
        assert_eq!(min_abs_error_vs_real(&inside, &enc), Rat::zero());
    }
}
