//! Symbolic differentiation with algebraic simplification.
//!
//! Derivatives feed the propagation-coefficient computation, so they must be
//! exact; simplification only rewrites between expressions with identical
//! real semantics on the shared domain (no `0 * e -> 0` surprises with
//! division: `e` stays total because derivative inputs are subexpressions of
//! programs whose own evaluation is checked separately).

use crate::ast::{Expr, ExprKey, ExprKind, RcExpr, Sym};
use crate::domain::InputDomain;
use crate::range::{RangeEngine, RangeError};
use crate::rational::Rat;
use std::collections::HashMap;

/// d/dv of a let-free expression. Panics on `Let`/`Call` nodes: analyses
/// differentiate only fully inlined arithmetic.
pub fn differentiate(e: &RcExpr, v: &Sym) -> RcExpr {
    let mut memo: HashMap<ExprKey, RcExpr> = HashMap::new();
    let d = diff_inner(e, v, &mut memo);
    simplify(&d)
}

fn diff_inner(e: &RcExpr, v: &Sym, memo: &mut HashMap<ExprKey, RcExpr>) -> RcExpr {
    if let Some(hit) = memo.get(&ExprKey(e.clone())) {
        return hit.clone();
    }
    let out = match &e.kind {
        ExprKind::Var(name) => {
            if name == v {
                Expr::konst(Rat::one())
            } else {
                Expr::konst(Rat::zero())
            }
        }
        ExprKind::Const(_) => Expr::konst(Rat::zero()),
        ExprKind::Add(a, b) => Expr::add(diff_inner(a, v, memo), diff_inner(b, v, memo)),
        ExprKind::Sub(a, b) => Expr::sub(diff_inner(a, v, memo), diff_inner(b, v, memo)),
        ExprKind::Mul(a, b) => {
            // (ab)' = a'b + ab'
            let da = diff_inner(a, v, memo);
            let db = diff_inner(b, v, memo);
            Expr::add(Expr::mul(da, b.clone()), Expr::mul(a.clone(), db))
        }
        ExprKind::Div(a, b) => {
            // (a/b)' = (a'b - ab') / b^2
            let da = diff_inner(a, v, memo);
            let db = diff_inner(b, v, memo);
            Expr::div(
                Expr::sub(Expr::mul(da, b.clone()), Expr::mul(a.clone(), db)),
                Expr::mul(b.clone(), b.clone()),
            )
        }
        ExprKind::Sqrt(a) => {
            // sqrt(a)' = a' / (2 sqrt(a))
            let da = diff_inner(a, v, memo);
            Expr::div(
                da,
                Expr::mul(Expr::konst(Rat::from_int(2)), Expr::sqrt(a.clone())),
            )
        }
        ExprKind::Let { .. } | ExprKind::Call(..) => {
            panic!("differentiate expects inlined arithmetic (no let/call)")
        }
    };
    memo.insert(ExprKey(e.clone()), out.clone());
    out
}

/// Semantics-preserving cleanup: exact constant folding and unit/zero
/// identities. Division folds only when the divisor constant is nonzero;
/// `sqrt` folds only for perfect rational squares.
pub fn simplify(e: &RcExpr) -> RcExpr {
    let mut memo: HashMap<ExprKey, RcExpr> = HashMap::new();
    simp(e, &mut memo)
}

fn as_const(e: &RcExpr) -> Option<&Rat> {
    match &e.kind {
        ExprKind::Const(c) => Some(c),
        _ => None,
    }
}

fn simp(e: &RcExpr, memo: &mut HashMap<ExprKey, RcExpr>) -> RcExpr {
    if let Some(hit) = memo.get(&ExprKey(e.clone())) {
        return hit.clone();
    }
    let out = match &e.kind {
        ExprKind::Var(_) | ExprKind::Const(_) => e.clone(),
        ExprKind::Add(a, b) => {
            let (a, b) = (simp(a, memo), simp(b, memo));
            match (as_const(&a), as_const(&b)) {
                (Some(x), Some(y)) => Expr::konst(x + y),
                (Some(x), None) if x.is_zero() => b,
                (None, Some(y)) if y.is_zero() => a,
                _ => Expr::add(a, b),
            }
        }
        ExprKind::Sub(a, b) => {
            let (a, b) = (simp(a, memo), simp(b, memo));
            match (as_const(&a), as_const(&b)) {
                (Some(x), Some(y)) => Expr::konst(x - y),
                (None, Some(y)) if y.is_zero() => a,
                // 0 - e kept: it is the exact-negation form.
                _ => Expr::sub(a, b),
            }
        }
        ExprKind::Mul(a, b) => {
            let (a, b) = (simp(a, memo), simp(b, memo));
            match (as_const(&a), as_const(&b)) {
                (Some(x), Some(y)) => Expr::konst(x * y),
                (Some(x), None) => {
                    if x.is_zero() {
                        Expr::konst(Rat::zero())
                    } else if *x == Rat::one() {
                        b
                    } else {
                        Expr::mul(a, b)
                    }
                }
                (None, Some(y)) => {
                    if y.is_zero() {
                        Expr::konst(Rat::zero())
                    } else if *y == Rat::one() {
                        a
                    } else {
                        Expr::mul(a, b)
                    }
                }
                _ => Expr::mul(a, b),
            }
        }
        ExprKind::Div(a, b) => {
            let (a, b) = (simp(a, memo), simp(b, memo));
            match (as_const(&a), as_const(&b)) {
                (Some(x), Some(y)) if !y.is_zero() => Expr::konst(x / y),
                (Some(x), None) if x.is_zero() => {
                    // 0 / e == 0 wherever e is defined; derivative exprs are
                    // only evaluated where the original divisor is nonzero.
                    Expr::konst(Rat::zero())
                }
                (None, Some(y)) if *y == Rat::one() => a,
                _ => Expr::div(a, b),
            }
        }
        ExprKind::Sqrt(a) => {
            let a = simp(a, memo);
            if let Some(x) = as_const(&a) {
                if !x.is_negative() {
                    if let Some(r) = exact_sqrt(x) {
                        memo.insert(ExprKey(e.clone()), Expr::konst(r.clone()));
                        return Expr::konst(r);
                    }
                }
            }
            Expr::sqrt(a)
        }
        ExprKind::Let { name, value, body } => {
            let value = simp(value, memo);
            let body = simp(body, memo);
            Expr::let_in(name.clone(), value, body)
        }
        ExprKind::Call(f, args) => {
            Expr::call(f.clone(), args.iter().map(|x| simp(x, memo)).collect())
        }
    };
    memo.insert(ExprKey(e.clone()), out.clone());
    out
}

/// Exact rational square root, when the value is a perfect square.
/// Propagation coefficients: K_i bounds |df/dx_i| over the given domain,
/// whose boxes the caller has already inflated to cover both ideal and
/// noisy inputs. Each bound comes from the refined range of the symbolic
/// derivative; a singularity inside the domain surfaces as the range
/// engine's runtime-error diagnosis.
pub fn bound_jacobian(
    engine: &RangeEngine<'_>,
    f: &RcExpr,
    params: &[Sym],
    domain: &InputDomain,
) -> Result<Vec<Rat>, RangeError> {
    let flat = f.inline_lets();
    let mut ks = Vec::with_capacity(params.len());
    for p in params {
        let d = differentiate(&flat, p);
        let r = engine.get_range(&d, domain)?;
        ks.push(r.max_abs());
    }
    Ok(ks)
}

fn exact_sqrt(v: &Rat) -> Option<Rat> {
    if v.is_negative() {
        return None;
    }
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_expr;
    use crate::simulate::rational_eval;
    use std::collections::BTreeMap;
    use std::sync::Arc;

    fn d(src: &str, v: &str) -> RcExpr {
        differentiate(&parse_expr(src).unwrap(), &Arc::from(v))
    }

    fn eval_at(e: &RcExpr, binds: &[(&str, &str)]) -> Rat {
        let env: BTreeMap<Sym, Rat> = binds
            .iter()
            .map(|(k, v)| (Arc::from(*k) as Sym, v.parse().unwrap()))
            .collect();
        rational_eval(e, &env).expect("eval")
    }

    #[test]
    fn polynomial_rule() {
        // d/dx (x*x*x) = 3x^2 up to algebra; check by value.
        let g = d("x*x*x", "x");
        for x in ["0", "1", "-2", "0.5"] {
            let got = eval_at(&g, &[("x", x)]);
            let xv: Rat = x.parse().unwrap();
            assert_eq!(got, &Rat::from_int(3) * &xv.square());
        }
    }

    #[test]
    fn product_and_other_var() {
        let g = d("x*y - x*x", "x");
        // = y - 2x
        let got = eval_at(&g, &[("x", "3"), ("y", "5")]);
        assert_eq!(got, Rat::from_int(5 - 6));
        let gy = d("x*y - x*x", "y");
        let got = eval_at(&gy, &[("x", "3"), ("y", "100")]);
        assert_eq!(got, Rat::from_int(3));
    }

    #[test]
    fn quotient_rule() {
        let g = d("x / (1.0 + x)", "x");
        // = 1/(1+x)^2
        let got = eval_at(&g, &[("x", "1")]);
        assert_eq!(got, Rat::from_ratio(1, 4));
    }

    #[test]
    fn sqrt_rule() {
        let g = d("sqrt(x)", "x");
        // = 1/(2 sqrt x); at x = 4: 1/4
        let got = eval_at(&g, &[("x", "4")]);
        assert_eq!(got, Rat::from_ratio(1, 4));
    }

    #[test]
    fn central_difference_agreement() {
        // Relative error of symbolic derivative vs central differences at
        // rational points, h = 1e-6 exact.
        let cases = [
            ("x - x*x*x/6.0 + x*x*x*x*x/120.0", vec![("x", "0.7")]),
            ("x*y + y*y - x/1.5", vec![("x", "1.2"), ("y", "-0.8")]),
            ("(x*x + y) / (y*y + 3.0)", vec![("x", "2.0"), ("y", "1.0")]),
        ];
        let h: Rat = "1e-6".parse().unwrap();
        for (src, binds) in cases {
            let e = parse_expr(src).unwrap();
            let env: BTreeMap<Sym, Rat> = binds
                .iter()
                .map(|(k, v)| (Arc::from(*k) as Sym, v.parse().unwrap()))
                .collect();
            for (v, _) in &binds {
                let vs: Sym = Arc::from(*v);
                let g = differentiate(&e, &vs);
                let sym = rational_eval(&g, &env).unwrap();
                let mut plus = env.clone();
                let mut minus = env.clone();
                plus.insert(vs.clone(), &env[&vs] + &h);
                minus.insert(vs.clone(), &env[&vs] - &h);
                let fp = rational_eval(&e, &plus).unwrap();
                let fm = rational_eval(&e, &minus).unwrap();
                let fd = &(&fp - &fm) / &(&h + &h);
                let denom = if sym.is_zero() { Rat::one() } else { sym.abs() };
                let rel = (&(&sym - &fd) / &denom).abs();
                assert!(
                    rel < "1e-5".parse().unwrap(),
                    "{src} d/d{v}: sym {sym:?} vs fd {fd:?}"
                );
            }
        }
    }

    #[test]
    fn simplify_folds_constants() {
        let e = parse_expr("0.0 * x + 1.0 * y + (2.0 + 3.0) - 0.0").unwrap();
        let s = simplify(&e);
        assert_eq!(s.to_string(), "y + 5");
    }

    #[test]
    fn simplify_keeps_exact_negation() {
        let e = Expr::neg(Expr::var("x"));
        let s = simplify(&e);
        assert_eq!(s.to_string(), "0 - x");
    }

    #[test]
    fn simplify_no_divide_fold_by_zero() {
        let e = parse_expr("(1.0 + 1.0) / (1.0 - 1.0)").unwrap();
        let s = simplify(&e);
        // stays a division node (runtime error surfaced elsewhere)
        assert!(matches!(s.kind, ExprKind::Div(..)));
    }

    #[test]
    fn exact_sqrt_folding() {
        let e = parse_expr("sqrt(2.25)").unwrap();
        assert_eq!(simplify(&e).to_string(), "1.5");
        let e = parse_expr("sqrt(2.0)").unwrap();
        assert!(matches!(simplify(&e).kind, ExprKind::Sqrt(_)));
    }
}
