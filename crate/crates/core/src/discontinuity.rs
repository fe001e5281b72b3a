//! Error bounds across diverging branches.
//!
//! A conditional can send the real value down one branch and the rounded
//! value down another. Near the decision surface the two results are
//! compared directly: for an input `v` that the finite execution steers
//! into `f2` while the real execution of a nearby ideal input runs `f1`,
//!
//! ```text
//!     |f1(x) - f̃2(v)|  <=  K(f1) λ  +  max |f1 - f2|  +  σ(f2)
//! ```
//!
//! with every piece bounded over the *boundary domain*: the declared box
//! restricted to the finite path's conditions holding exactly at `v` and
//! the real path's conditions holding up to the guards' own evaluation
//! error. Most ordered path pairs have an empty boundary domain, so each
//! pair is first put to the certifier as a pure feasibility question and
//! only survivors pay for range analysis.

use crate::ast::{Cond, Expr, ExprKey, RcExpr, Sym};
use crate::certify::{check_feasible, Certifier, Verdict};
use crate::domain::InputDomain;
use crate::error_analysis::{
    propagate_initial_errors, roundoff_only, total_error_straightline, AnalysisError, Diagnostic,
    DiagnosticKind, ErrorReport,
};
use crate::frontend::Path;
use crate::interval::Interval;
use crate::precision::{FixedRounding, Precision};
use crate::range::{RangeConfig, RangeEngine};
use crate::rational::Rat;
use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;

/// What came of one ordered path pair (real execution takes `real_path`,
/// finite execution takes `finite_path`).
#[derive(Clone, Debug)]
pub struct PairOutcome {
    pub real_path: usize,
    pub finite_path: usize,
    /// The certifier refuted the boundary domain: divergence impossible.
    pub pruned: bool,
    /// Divergence error bound; `None` for pruned pairs.
    pub error: Option<Rat>,
    /// Range-engine certifier queries spent on this pair (pruning happens
    /// before the engine is touched, so pruned pairs show zero).
    pub queries: u64,
}

/// Branch-aware analysis result: the combined report plus the per-pair
/// audit trail.
#[derive(Clone, Debug)]
pub struct BranchReport {
    pub report: ErrorReport,
    pub pairs: Vec<PairOutcome>,
}

/// Bound on how far a guard's finite evaluation at the stored input can
/// drift from its exact value at the ideal input: evaluation roundoff plus
/// input-error propagation, over the unconstrained box.
fn guard_drift(
    engine: &RangeEngine<'_>,
    box_domain: &InputDomain,
    g: &RcExpr,
    lambda: &BTreeMap<Sym, Rat>,
    prec: Precision,
    rounding: FixedRounding,
) -> Result<Rat, AnalysisError> {
    let (_, sigma, _) = roundoff_only(engine, box_domain, g, prec, rounding)?;
    let (prop, _) = propagate_initial_errors(engine, box_domain, &BTreeMap::new(), g, lambda)?;
    // Rounded up to a short dyadic: the drift becomes a constant in every
    // boundary-domain constraint, and a long rational there would bloat
    // every linearization the certifier computes over that domain.
    Ok((&sigma + &prop).round_dyadic(128, crate::rational::Dir::Up))
}

/// The domain where the finite execution can take `finite.conds` while the
/// real one takes `real.conds`: finite conditions exact, real conditions
/// relaxed by each guard's drift bound. Conditions shared by both paths
/// are common prefix, not divergence, and stay exact.
fn boundary_domain(
    base: &InputDomain,
    real: &Path,
    finite: &Path,
    drift: &HashMap<ExprKey, Rat>,
) -> InputDomain {
    let mut constraints = base.constraints.clone();
    let finite_keys: Vec<(ExprKey, bool)> = finite
        .conds
        .iter()
        .map(|c| {
            let (g, strict) = c.as_le_zero();
            (ExprKey(g), strict)
        })
        .collect();
    constraints.extend(finite.conds.iter().cloned());
    for c in &real.conds {
        let (g, strict) = c.as_le_zero();
        if finite_keys.contains(&(ExprKey(g.clone()), strict)) {
            continue;
        }
        let d = drift
            .get(&ExprKey(g.clone()))
            .cloned()
            .unwrap_or_else(Rat::zero);
        // g(x) {<,<=} 0 and |g~(v) - g(x)| <= d give g(v) {<,<=} d.
        let op = if strict {
            crate::ast::RelOp::Lt
        } else {
            crate::ast::RelOp::Le
        };
        constraints.push(Cond::new(g, op, Expr::konst(d)));
    }
    InputDomain::new(base.vars.clone(), base.boxes.clone(), constraints)
}

/// Divergence bound for one feasible ordered pair over its boundary
/// domain: propagation through the real branch, real branch separation,
/// and roundoff of the branch actually executed.
pub fn discontinuity_error(
    engine: &RangeEngine<'_>,
    bdom: &InputDomain,
    f1: &RcExpr,
    f2: &RcExpr,
    lambda: &BTreeMap<Sym, Rat>,
    prec: Precision,
    rounding: FixedRounding,
) -> Result<Rat, AnalysisError> {
    let (part1, _) = propagate_initial_errors(engine, bdom, &BTreeMap::new(), f1, lambda)?;
    let gap = Expr::sub(f1.clone(), f2.clone());
    let part2 = engine
        .get_range(&gap.inline_lets(), bdom)
        .map_err(AnalysisError::Range)?
        .max_abs();
    let (_, part3, _) = roundoff_only(engine, bdom, f2, prec, rounding)?;
    Ok(&(&part1 + &part2) + &part3)
}

/// Error bound for a loop-free body with conditionals, output component
/// `output_index`: the maximum of every feasible path's straight-line
/// error and every feasible ordered pair's divergence error.
#[allow(clippy::too_many_arguments)]
pub fn total_error_with_branches<C: Certifier + Sync>(
    cert: &C,
    cfg: &RangeConfig,
    domain: &InputDomain,
    explicit_actual: &BTreeMap<Sym, Interval>,
    paths: &[Path],
    output_index: usize,
    lambda: &BTreeMap<Sym, Rat>,
    prec: Precision,
    rounding: FixedRounding,
    parallelism: usize,
) -> Result<BranchReport, AnalysisError> {
    let engine = RangeEngine::new(cert, cfg.clone());

    // Feasibility of each path on its own; unreachable paths contribute
    // nothing and pair pruning below would rediscover the contradiction.
    let mut feasible: Vec<usize> = Vec::new();
    let mut diagnostics: Vec<Diagnostic> = Vec::new();
    for (i, p) in paths.iter().enumerate() {
        let mut cs = domain.constraints.clone();
        cs.extend(p.conds.iter().cloned());
        let pd = InputDomain::new(domain.vars.clone(), domain.boxes.clone(), cs);
        if matches!(
            check_feasible(cert, &pd, cfg.certifier_budget),
            Verdict::Unsat
        ) {
            diagnostics.push(Diagnostic::new(
                DiagnosticKind::InfeasiblePath,
                format!("path {i} is unreachable; skipped"),
            ));
        } else {
            feasible.push(i);
        }
    }

    // Straight-line analysis per feasible path.
    let mut best: Option<ErrorReport> = None;
    let mut range_hull: Option<Interval> = None;
    for &i in &feasible {
        let p = &paths[i];
        let mut cs = domain.constraints.clone();
        cs.extend(p.conds.iter().cloned());
        let pd = InputDomain::new(domain.vars.clone(), domain.boxes.clone(), cs);
        let (rep, _) = total_error_straightline(
            &engine,
            &pd,
            explicit_actual,
            &p.outputs[output_index],
            lambda,
            prec,
            rounding,
        )?;
        range_hull = Some(match range_hull {
            None => rep.result_range.clone(),
            Some(h) => h.hull(&rep.result_range),
        });
        diagnostics.extend(rep.diagnostics.iter().cloned());
        if best.as_ref().is_none_or(|b| rep.total_error > b.total_error) {
            best = Some(rep);
        }
    }
    let mut report = best.expect("at least one feasible path");

    // Guard drift bounds, one per distinct guard expression.
    let box_domain = InputDomain::new(domain.vars.clone(), domain.boxes.clone(), Vec::new());
    let mut drift: HashMap<ExprKey, Rat> = HashMap::new();
    for &i in &feasible {
        for c in &paths[i].conds {
            let (g, _) = c.as_le_zero();
            let key = ExprKey(g.clone());
            if !drift.contains_key(&key) {
                let d = guard_drift(&engine, &box_domain, &g, lambda, prec, rounding)?;
                drift.insert(key, d);
            }
        }
    }

    // Ordered pairs: feasibility first (certifier only), then bounding for
    // survivors, fanned out over a bounded work pool.
    let mut survivors: Vec<(usize, usize, InputDomain)> = Vec::new();
    let mut pairs: Vec<PairOutcome> = Vec::new();
    for &i in &feasible {
        for &j in &feasible {
            if i == j {
                continue;
            }
            let bdom = boundary_domain(domain, &paths[i], &paths[j], &drift);
            if matches!(
                check_feasible(cert, &bdom, cfg.certifier_budget),
                Verdict::Unsat
            ) {
                pairs.push(PairOutcome {
                    real_path: i,
                    finite_path: j,
                    pruned: true,
                    error: None,
                    queries: 0,
                });
            } else {
                survivors.push((i, j, bdom));
            }
        }
    }

    let jobs: Mutex<std::vec::IntoIter<(usize, usize, InputDomain)>> =
        Mutex::new(survivors.into_iter());
    let results: Mutex<Vec<Result<PairOutcome, AnalysisError>>> = Mutex::new(Vec::new());
    let workers = parallelism.max(1);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let Some((i, j, bdom)) = jobs.lock().unwrap().next() else {
                    break;
                };
                let eng = RangeEngine::new(cert, cfg.clone());
                let out = discontinuity_error(
                    &eng,
                    &bdom,
                    &paths[i].outputs[output_index],
                    &paths[j].outputs[output_index],
                    lambda,
                    prec,
                    rounding,
                )
                .map(|error| PairOutcome {
                    real_path: i,
                    finite_path: j,
                    pruned: false,
                    error: Some(error),
                    queries: eng.query_count(),
                });
                results.lock().unwrap().push(out);
            });
        }
    });
    for r in results.into_inner().unwrap() {
        pairs.push(r?);
    }
    pairs.sort_by_key(|p| (p.real_path, p.finite_path));

    // The report keeps the dominating source: a divergence pair that beats
    // every straight-line path moves the whole bound.
    for p in &pairs {
        if let Some(e) = &p.error {
            if *e > report.total_error {
                report.total_error = e.clone();
            }
        }
    }
    if let Some(hull) = range_hull {
        report.result_range = hull.clone();
        report.relative_error = if hull.contains_zero() {
            None
        } else {
            Some(&report.total_error / &hull.min_abs())
        };
    }
    report.diagnostics = diagnostics;
    report.diagnostics.sort();
    report.diagnostics.dedup();

    Ok(BranchReport { report, pairs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certify::BuiltinCertifier;
    use crate::frontend::Program;

    fn run(
        src: &str,
        lambda_all: &str,
        prec: Precision,
        parallelism: usize,
    ) -> BranchReport {
        let prog = Program::parse(src).unwrap();
        let f = &prog.functions[0];
        let paths = f.enumerate_paths();
        let mut boxes = BTreeMap::new();
        for p in &f.params {
            boxes.insert(p.clone(), f.real_ranges[p].clone());
        }
        let mut constraints = Vec::new();
        for p in &f.extra {
            let mut dnf = p.to_dnf();
            if dnf.len() == 1 {
                constraints.extend(dnf.pop().unwrap());
            }
        }
        let domain = InputDomain::new(f.params.clone(), boxes, constraints);
        let lam: Rat = lambda_all.parse().unwrap();
        let lambda: BTreeMap<_, _> = f.params.iter().map(|p| (p.clone(), lam.clone())).collect();
        let cert = BuiltinCertifier;
        total_error_with_branches(
            &cert,
            &RangeConfig::default(),
            &domain,
            &BTreeMap::new(),
            &paths,
            0,
            &lambda,
            prec,
            FixedRounding::Truncate,
            parallelism,
        )
        .unwrap()
    }

    #[test]
    fn single_path_reduces_to_straightline() {
        let src = r#"
def f(x: Real): Real = {
  require(0.0 <= x && x <= 1.0)
  x * x
}
"#;
        let br = run(src, "0", Precision::Float64, 1);
        assert!(br.pairs.is_empty());
        let prog = Program::parse(src).unwrap();
        let f = &prog.functions[0];
        let cert = BuiltinCertifier;
        let eng = RangeEngine::new(&cert, RangeConfig::default());
        let mut boxes = BTreeMap::new();
        boxes.insert(f.params[0].clone(), f.real_ranges[&f.params[0]].clone());
        let d = InputDomain::new(f.params.clone(), boxes, Vec::new());
        let (direct, _) = total_error_straightline(
            &eng,
            &d,
            &BTreeMap::new(),
            &f.enumerate_paths()[0].outputs[0],
            &BTreeMap::new(),
            Precision::Float64,
            FixedRounding::Truncate,
        )
        .unwrap();
        assert_eq!(br.report.total_error, direct.total_error);
    }

    #[test]
    fn boundary_pairs_survive_at_a_live_guard() {
        // Two branches meeting at x = 0.1: both orderings of the pair are
        // feasible inside the drift shell and must not be over-pruned.
        let src = r#"
def f(x: Real): Real = {
  require(0.0 <= x && x <= 0.2)
  if (x < 0.1) { x } else { x + 1.0 }
}
"#;
        let br = run(src, "0", Precision::Float64, 1);
        assert_eq!(br.pairs.len(), 2);
        assert!(br.pairs.iter().all(|p| !p.pruned));
    }

    #[test]
    fn contradictory_pair_is_pruned_with_zero_queries() {
        let src = r#"
def f(x: Real): Real = {
  require(0.0 <= x && x <= 10.0)
  if (x < 2.0) { x } else if (x < 8.0) { x * 2.0 } else { x * 3.0 }
}
"#;
        let br = run(src, "0", Precision::Float64, 2);
        // Pairs between the x<2 and x>=8 leaves are separated by the whole
        // middle band; the certifier refutes them without any range work.
        let far: Vec<_> = br
            .pairs
            .iter()
            .filter(|p| {
                (p.real_path == 0 && p.finite_path == 2)
                    || (p.real_path == 2 && p.finite_path == 0)
            })
            .collect();
        assert_eq!(far.len(), 2);
        for p in &far {
            assert!(p.pruned, "distant pair should be refuted");
            assert_eq!(p.queries, 0);
            assert!(p.error.is_none());
        }
        // Adjacent pairs survive and carry a bound.
        assert!(br
            .pairs
            .iter()
            .any(|p| !p.pruned && p.error.is_some()));
    }

    #[test]
    fn equal_branches_have_continuity_scale_divergence() {
        let src = r#"
def f(x: Real): Real = {
  require(0.0 <= x && x <= 1.0)
  if (x < 0.5) { x * 2.0 } else { x * 2.0 }
}
"#;
        let br = run(src, "0", Precision::Float64, 1);
        // f1 = f2: part2 vanishes up to engine slack; everything left is
        // roundoff-sized.
        for p in &br.pairs {
            if let Some(e) = &p.error {
                assert!(e < &"1e-9".parse().unwrap(), "got {e}");
            }
        }
        assert!(br.report.total_error < "1e-9".parse().unwrap());
    }

    #[test]
    fn jump_discontinuity_is_caught() {
        // Height-1 jump at x = 0.5: any divergence pair must report ~1.
        let src = r#"
def f(x: Real): Real = {
  require(0.0 <= x && x <= 1.0)
  if (x < 0.5) { x } else { x + 1.0 }
}
"#;
        let br = run(src, "1e-6", Precision::Float64, 1);
        let worst = br
            .pairs
            .iter()
            .filter_map(|p| p.error.clone())
            .max()
            .unwrap();
        assert!(worst > Rat::one(), "got {worst}");
        assert!(worst < "1.2".parse().unwrap(), "got {worst}");
        assert_eq!(br.report.total_error, worst);
    }

    #[test]
    fn swapping_branches_and_negating_guard_is_invariant() {
        let a = r#"
def f(x: Real): Real = {
  require(0.0 <= x && x <= 1.0)
  if (x < 0.5) { x * x } else { x }
}
"#;
        let b = r#"
def f(x: Real): Real = {
  require(0.0 <= x && x <= 1.0)
  if (x >= 0.5) { x } else { x * x }
}
"#;
        let ra = run(a, "1e-7", Precision::Float64, 1);
        let rb = run(b, "1e-7", Precision::Float64, 1);
        assert_eq!(ra.report.total_error, rb.report.total_error);
    }

    #[test]
    fn parallel_matches_sequential() {
        let src = r#"
def f(x: Real, y: Real): Real = {
  require(0.0 <= x && x <= 1.0 && 0.0 <= y && y <= 1.0)
  if (x < y) { x * y } else { y * y }
}
"#;
        let seq = run(src, "1e-8", Precision::Float64, 1);
        let par = run(src, "1e-8", Precision::Float64, 4);
        assert_eq!(seq.report.total_error, par.report.total_error);
        assert_eq!(seq.pairs.len(), par.pairs.len());
    }
}
