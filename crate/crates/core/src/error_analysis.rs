//! Finite-precision error bounds for straight-line arithmetic.
//!
//! The deviation between the real-valued result on ideal inputs and the
//! finite-precision result on noisy inputs is bounded two ways. The
//! separation route splits it into propagation of the input errors through
//! the real function (Jacobian bounds times the input errors) plus the
//! roundoff of one finite-precision evaluation over the noisy input
//! ranges. The affine route runs the roundoff analysis once with the
//! input errors injected as initial noise terms. Each is sound and each
//! wins in different regimes (the separation route on correlated
//! nonlinear terms, the affine route when cancellation dominates), so the
//! reported bound is their minimum.
//!
//! All bookkeeping is exact rational arithmetic: every coefficient in an
//! error form, every range endpoint, and every reported bound is a
//! rational the analysis actually proved.

use crate::affine::{AffineForm, NoiseCtx};
use crate::ast::{Cond, Expr, ExprKey, ExprKind, RcExpr, Sym};
use crate::domain::InputDomain;
use crate::interval::Interval;
use crate::precision::{fixed_format_for, FixedFormat, FixedOverflow, FixedRounding, Precision};
use crate::range::{NodeRanges, RangeEngine, RangeError};
use crate::rational::{Dir, Rat};
use crate::symdiff;
use std::collections::{BTreeMap, HashMap};
use thiserror::Error;

/// Non-fatal findings attached to a report.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum DiagnosticKind {
    /// A result range sits entirely below the smallest normal float.
    Subnormal,
    /// A propagation coefficient could not be bounded; the affine route
    /// alone backs the reported bound.
    UnboundedDerivative,
    /// The loop's declared iterate ranges could not be verified by interval
    /// simulation and are trusted as given.
    LoopRangeTrusted,
    /// The loop's declared iterate ranges were verified by simulation.
    LoopRangeVerified,
    /// (I - K) was singular; the geometric-sum fallback produced the bound.
    SingularIteration,
    /// A path or path pair was proven infeasible and skipped.
    InfeasiblePath,
    /// Anything else worth surfacing.
    Note,
}

impl DiagnosticKind {
    pub fn name(&self) -> &'static str {
        match self {
            DiagnosticKind::Subnormal => "subnormal",
            DiagnosticKind::UnboundedDerivative => "unbounded-derivative",
            DiagnosticKind::LoopRangeTrusted => "loop-range-trusted",
            DiagnosticKind::LoopRangeVerified => "loop-range-verified",
            DiagnosticKind::SingularIteration => "singular-iteration",
            DiagnosticKind::InfeasiblePath => "infeasible-path",
            DiagnosticKind::Note => "note",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    pub message: String,
}

impl Diagnostic {
    pub fn new(kind: DiagnosticKind, message: impl Into<String>) -> Diagnostic {
        Diagnostic {
            kind,
            message: message.into(),
        }
    }
}

/// Fatal analysis failures; the driver records them per precision.
#[derive(Clone, Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Range(#[from] RangeError),
    #[error("derivative with respect to `{var}` is unbounded: {detail}")]
    UnboundedDerivative { var: String, detail: String },
    #[error("overflow at `{node}`: {detail}")]
    Overflow { node: String, detail: String },
    #[error("`{0}` is not supported in fixed-point arithmetic")]
    UnsupportedFixed(&'static str),
}

impl AnalysisError {
    /// Coarse category used by the driver's per-precision failure table.
    pub fn failure_class(&self) -> &'static str {
        match self {
            AnalysisError::Range(_) | AnalysisError::UnboundedDerivative { .. } => {
                "runtime-error-risk"
            }
            AnalysisError::Overflow { .. } => "overflow",
            AnalysisError::UnsupportedFixed(_) => "unsupported-operation",
        }
    }

    fn overflow(node: &RcExpr, of: &FixedOverflow) -> AnalysisError {
        AnalysisError::Overflow {
            node: clip(node),
            detail: of.to_string(),
        }
    }
}

fn clip(e: &RcExpr) -> String {
    let mut s = e.to_string();
    if s.len() > 60 {
        s.truncate(57);
        s.push_str("...");
    }
    s
}

/// The per-function analysis outcome for one precision.
#[derive(Clone, Debug)]
pub struct ErrorReport {
    /// Sound bound on |real result on ideal inputs - finite result on
    /// noisy inputs|.
    pub total_error: Rat,
    /// Roundoff of one finite-precision evaluation on noisy inputs.
    pub roundoff_part: Rat,
    /// Input-error propagation through the real function (sum of K_i * λ_i).
    pub propagation_part: Rat,
    /// Propagation coefficients per parameter, in parameter order.
    pub k: Vec<(Sym, Rat)>,
    /// Real-valued result range over the ideal input domain.
    pub result_range: Interval,
    /// total_error / min |result|, present when the range excludes zero.
    pub relative_error: Option<Rat>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Per-node value enclosures and (for fixed point) formats, as assumed by
/// the analysis; code emission must reproduce exactly these layouts.
#[derive(Clone, Debug, Default)]
pub struct NodeLayout {
    /// Sound enclosure of the finite-precision value at each node.
    pub totals: HashMap<ExprKey, Interval>,
    /// Fixed-point format per node (empty for float precisions).
    pub formats: HashMap<ExprKey, FixedFormat>,
    /// Admissible input interval per parameter (emitted as runtime guards).
    pub guards: BTreeMap<Sym, Interval>,
}

/// Result of one affine error walk.
pub struct ErrorWalk {
    /// Real-valued range of the root over the walk domain.
    pub range: Interval,
    /// Accumulated error form of the root.
    pub err: AffineForm,
    pub layout: NodeLayout,
    pub diagnostics: Vec<Diagnostic>,
}

impl ErrorWalk {
    pub fn max_error(&self) -> Rat {
        self.err.max_abs()
    }
}

/// Default initial error of an input when the precondition gives none:
/// the representation error of storing a value from `real` (floats: one
/// rounding; fixed: the quantization of the input's own format, with the
/// format chosen to also hold the error-widened values).
pub fn default_initial_error(
    prec: Precision,
    rounding: FixedRounding,
    real: &Interval,
    explicit_actual: Option<&Interval>,
) -> Result<Rat, AnalysisError> {
    if let Some(delta) = prec.unit_roundoff().filter(|_| prec.is_float()) {
        return Ok(&delta * &real.max_abs());
    }
    let bits = prec.bit_width().expect("fixed precision has a bit width");
    let mut hull = real.clone();
    if let Some(a) = explicit_actual {
        hull = hull.hull(a);
    }
    let base = hull.clone();
    // The format must hold real values plus their own quantization error;
    // widening can cost a fractional bit, so iterate to a fixed point.
    let mut fmt = fixed_format_for(&hull, bits, rounding).map_err(|of| {
        AnalysisError::Overflow {
            node: "input".into(),
            detail: of.to_string(),
        }
    })?;
    for _ in 0..4 {
        let q = fmt.quantization_error(rounding);
        let widened = Interval::new(base.lo() - &q, base.hi() + &q);
        if fmt.fits(&widened, rounding) {
            return Ok(q);
        }
        let next = fixed_format_for(&widened, bits, rounding).map_err(|of| {
            AnalysisError::Overflow {
                node: "input".into(),
                detail: of.to_string(),
            }
        })?;
        if next.frac_bits >= fmt.frac_bits {
            return Ok(q);
        }
        fmt = next;
    }
    Ok(fmt.quantization_error(rounding))
}

/// Widen the domain so it covers noisy inputs: boxes inflated by the input
/// errors, constraints relaxed by a sound slack (a constraint that holds
/// for ideal inputs holds for noisy ones only up to the constraint
/// expression's own sensitivity to the input errors).
pub fn inflated_domain(
    engine: &RangeEngine<'_>,
    domain: &InputDomain,
    lambda: &BTreeMap<Sym, Rat>,
    explicit_actual: &BTreeMap<Sym, Interval>,
) -> InputDomain {
    let mut boxes = BTreeMap::new();
    for (v, iv) in &domain.boxes {
        let l = lambda.get(v).cloned().unwrap_or_else(Rat::zero);
        let mut widened = Interval::new(iv.lo() - &l, iv.hi() + &l);
        if let Some(act) = explicit_actual.get(v) {
            // Noisy values obey both the inflation and the declared ranges.
            if let Some(clipped) = widened.intersect(act) {
                widened = clipped;
            }
        }
        // Outward dyadic rounding: decimal error magnitudes (1e-8, ...)
        // otherwise plant huge prime factors in every box endpoint the
        // branch-and-bound search derives from this domain.
        widened = Interval::new(
            widened.lo().round_dyadic(128, Dir::Down),
            widened.hi().round_dyadic(128, Dir::Up),
        );
        boxes.insert(v.clone(), widened);
    }
    let inflated = InputDomain::new(domain.vars.clone(), boxes, Vec::new());

    let mut constraints = Vec::with_capacity(domain.constraints.len());
    'conds: for cond in &domain.constraints {
        let (g, _strict) = cond.as_le_zero();
        let mut slack = Rat::zero();
        for v in g.free_vars() {
            let l = lambda.get(&v).cloned().unwrap_or_else(Rat::zero);
            if l.is_zero() {
                continue;
            }
            let dg = symdiff::differentiate(&g, &v);
            match engine.eval_interval(&dg, &inflated) {
                Ok(r) => slack = &slack + &(&l * &r.max_abs()),
                // Unbounded sensitivity: the constraint gives no sound
                // information about noisy inputs; drop it.
                Err(_) => continue 'conds,
            }
        }
        if slack.is_zero() {
            constraints.push(cond.clone());
        } else {
            constraints.push(Cond::new(g, crate::ast::RelOp::Le, Expr::konst(slack)));
        }
    }
    inflated.with_constraints(constraints)
}

struct Walker<'a> {
    prec: Precision,
    rounding: FixedRounding,
    lambda: &'a BTreeMap<Sym, Rat>,
    var_hull: &'a BTreeMap<Sym, Interval>,
    fmt_override: Option<&'a HashMap<ExprKey, FixedFormat>>,
    ctx: &'a NoiseCtx,
    ranges: NodeRanges,
    memo: HashMap<ExprKey, (Interval, AffineForm)>,
    layout: NodeLayout,
    diags: Vec<Diagnostic>,
}

/// One affine error walk: per node, the real range (from the range engine
/// over `domain`) and an affine form bounding |finite value - real value|,
/// including `lambda` as initial input errors. `var_hull` supplies the
/// interval each input's storage must cover (for fixed formats and
/// guards); `fmt_override` forces fixed formats from an earlier walk so a
/// re-analysis models the code actually emitted.
#[allow(clippy::too_many_arguments)]
pub fn error_walk(
    engine: &RangeEngine<'_>,
    domain: &InputDomain,
    expr: &RcExpr,
    prec: Precision,
    rounding: FixedRounding,
    lambda: &BTreeMap<Sym, Rat>,
    var_hull: &BTreeMap<Sym, Interval>,
    fmt_override: Option<&HashMap<ExprKey, FixedFormat>>,
    ctx: &NoiseCtx,
) -> Result<ErrorWalk, AnalysisError> {
    let flat = expr.inline_lets();
    let (_, ranges) = engine.range_with_intermediates(&flat, domain)?;
    let mut w = Walker {
        prec,
        rounding,
        lambda,
        var_hull,
        fmt_override,
        ctx,
        ranges,
        memo: HashMap::new(),
        layout: NodeLayout {
            guards: var_hull.clone(),
            ..NodeLayout::default()
        },
        diags: Vec::new(),
    };
    let (range, err) = w.walk(&flat)?;
    w.diags.sort();
    w.diags.dedup();
    Ok(ErrorWalk {
        range,
        err,
        layout: w.layout,
        diagnostics: w.diags,
    })
}

impl<'a> Walker<'a> {
    fn range_of(&self, e: &RcExpr) -> Interval {
        self.ranges
            .get(&ExprKey(e.clone()))
            .cloned()
            .expect("node range recorded by range engine")
    }

    fn walk(&mut self, e: &RcExpr) -> Result<(Interval, AffineForm), AnalysisError> {
        if let Some(hit) = self.memo.get(&ExprKey(e.clone())) {
            return Ok(hit.clone());
        }
        let out = match &e.kind {
            ExprKind::Var(v) => self.walk_var(e, v)?,
            ExprKind::Const(c) => self.walk_const(e, c)?,
            ExprKind::Sub(a, b) if is_zero_const(a) => {
                // Exact negation: sign flips are free in both float and
                // fixed arithmetic (format edge cases handled below).
                let (_, eb) = self.walk(b)?;
                self.finish_neg(e, b, eb)?
            }
            ExprKind::Add(a, b) | ExprKind::Sub(a, b) => {
                let (_, ea) = self.walk(a)?;
                let (_, eb) = self.walk(b)?;
                let subtract = matches!(e.kind, ExprKind::Sub(..));
                let pre = if subtract { ea.sub(&eb) } else { ea.add(&eb) };
                self.finish_linear(e, a, b, pre)?
            }
            ExprKind::Mul(a, b) => {
                let (ra, ea) = self.walk(a)?;
                let (_, eb) = self.walk(b)?;
                let pre = if Expr::same(a, b) {
                    // x̃² - x² = 2x·e + e²; keep the correlation.
                    let two_x = ra.add(&ra);
                    let lin = ea.mul_interval(&two_x, self.ctx);
                    let quad = ea.square(self.ctx);
                    lin.add(&quad)
                } else {
                    let rb = self.range_of(b);
                    let cross = ea.mul(&eb, self.ctx);
                    eb.mul_interval(&ra, self.ctx)
                        .add(&ea.mul_interval(&rb, self.ctx))
                        .add(&cross)
                };
                self.finish_nonlinear(e, pre)?
            }
            ExprKind::Div(a, b) => {
                let (ra, ea) = self.walk(a)?;
                let (rb, eb) = self.walk(b)?;
                // 1/ỹ - 1/y = -e_y / (y·ỹ); the denominator product must
                // be sign-definite or the division may trap at runtime.
                let actual_b = rb.add(&eb.to_interval());
                let prod = rb.mul(&actual_b);
                if prod.contains_zero() {
                    return Err(RangeError::runtime(
                        crate::range::RuntimeErrorKind::DivisionByZero,
                        e,
                    )
                    .into());
                }
                let inv_factor = Interval::point(-&Rat::one())
                    .div(&prod)
                    .expect("sign-definite product");
                let e_inv = eb.mul_interval(&inv_factor, self.ctx);
                let r_inv = Interval::point(Rat::one())
                    .div(&rb)
                    .map_err(|_| {
                        RangeError::runtime(
                            crate::range::RuntimeErrorKind::DivisionByZero,
                            e,
                        )
                    })?;
                let cross = ea.mul(&e_inv, self.ctx);
                let pre = e_inv
                    .mul_interval(&ra, self.ctx)
                    .add(&ea.mul_interval(&r_inv, self.ctx))
                    .add(&cross);
                self.finish_nonlinear(e, pre)?
            }
            ExprKind::Sqrt(a) => {
                if self.prec.is_fixed() {
                    return Err(AnalysisError::UnsupportedFixed("sqrt"));
                }
                let (ra, ea) = self.walk(a)?;
                let actual_a = ra.add(&ea.to_interval());
                if actual_a.lo().is_negative() {
                    return Err(RangeError::runtime(
                        crate::range::RuntimeErrorKind::NegativeSqrt,
                        e,
                    )
                    .into());
                }
                let pre = if ea.x0.is_zero() && ea.rad().is_zero() {
                    AffineForm::zero()
                } else {
                    // |√x̃ - √x| = |e| / (√x̃ + √x) with both args in the
                    // actual range; unbounded as the range touches zero.
                    let slo =
                        crate::interval::sqrt_rat(actual_a.lo(), crate::rational::Dir::Down);
                    if slo.is_zero() {
                        return Err(AnalysisError::UnboundedDerivative {
                            var: clip(a),
                            detail: "square-root slope unbounded at zero".into(),
                        });
                    }
                    let shi =
                        crate::interval::sqrt_rat(actual_a.hi(), crate::rational::Dir::Up);
                    let two = Rat::from_int(2);
                    let factor = Interval::new(
                        Rat::one() / &(&two * &shi),
                        Rat::one() / &(&two * &slo),
                    );
                    ea.mul_interval(&factor, self.ctx)
                };
                self.finish_nonlinear(e, pre)?
            }
            ExprKind::Let { .. } | ExprKind::Call(..) => {
                unreachable!("lets inlined, calls eliminated before analysis")
            }
        };
        self.memo.insert(ExprKey(e.clone()), out.clone());
        Ok(out)
    }

    fn walk_var(&mut self, e: &RcExpr, v: &Sym) -> Result<(Interval, AffineForm), AnalysisError> {
        let range = self.range_of(e);
        let l = self.lambda.get(v).cloned().unwrap_or_else(Rat::zero);
        let err = AffineForm::symmetric(l, self.ctx);
        let total = range.add(&err.to_interval());
        if self.prec.is_fixed() {
            let hull = self
                .var_hull
                .get(v)
                .cloned()
                .unwrap_or_else(|| total.clone())
                .hull(&total);
            let fmt = self.format_for(e, &hull)?;
            self.layout.formats.insert(ExprKey(e.clone()), fmt);
        } else {
            self.check_float_extremes(e, &total)?;
        }
        self.layout.totals.insert(ExprKey(e.clone()), total);
        Ok((range, err))
    }

    fn walk_const(&mut self, e: &RcExpr, c: &Rat) -> Result<(Interval, AffineForm), AnalysisError> {
        let range = Interval::point(c.clone());
        let (stored, err) = match self.prec {
            Precision::Float32 => {
                let f = c.to_f32();
                if !f.is_finite() {
                    return Err(AnalysisError::Overflow {
                        node: clip(e),
                        detail: "constant exceeds the float32 range".into(),
                    });
                }
                let r = Rat::from_f32(f).expect("finite float");
                let d = &r - c;
                (r, AffineForm::constant(d))
            }
            Precision::Float64 => {
                let f = c.to_f64();
                if !f.is_finite() {
                    return Err(AnalysisError::Overflow {
                        node: clip(e),
                        detail: "constant exceeds the float64 range".into(),
                    });
                }
                let r = Rat::from_f64(f).expect("finite float");
                let d = &r - c;
                (r, AffineForm::constant(d))
            }
            Precision::DoubleDouble | Precision::QuadDouble => {
                // Extended formats are not simulated bit-exactly; bound the
                // representation error by one unit roundoff.
                let delta = self.prec.unit_roundoff().expect("float precision");
                let bound = &delta * &c.abs();
                (c.clone(), AffineForm::symmetric(bound, self.ctx))
            }
            _ => {
                // Fixed point: materialize at the constant's own format.
                let fmt = self.format_for(e, &range)?;
                let int = fmt.repr_int(c, self.rounding);
                let stored = fmt.value_of(&int);
                let d = &stored - c;
                self.layout.formats.insert(ExprKey(e.clone()), fmt);
                (stored, AffineForm::constant(d))
            }
        };
        let total = Interval::point(stored);
        self.layout.totals.insert(ExprKey(e.clone()), total);
        Ok((range, err))
    }

    // Negation commits no roundoff unless the mirrored value falls out of
    // the operand's (asymmetric) fixed format.
    fn finish_neg(
        &mut self,
        e: &RcExpr,
        operand: &RcExpr,
        eb: AffineForm,
    ) -> Result<(Interval, AffineForm), AnalysisError> {
        let range = self.range_of(e);
        let err = eb.neg();
        let total_pre = {
            let t = self
                .layout
                .totals
                .get(&ExprKey(operand.clone()))
                .expect("operand walked");
            Interval::new(-t.hi(), -t.lo())
        };
        if self.prec.is_fixed() {
            let fa = self.fmt_of(operand);
            if let Some(f) = self.forced_format(e) {
                let rho = self.shift_rho(fa.frac_bits, f.frac_bits);
                let err = err.add(&AffineForm::symmetric(rho.clone(), self.ctx));
                let total = Interval::new(total_pre.lo() - &rho, total_pre.hi() + &rho);
                self.layout.formats.insert(ExprKey(e.clone()), f);
                self.layout.totals.insert(ExprKey(e.clone()), total);
                return Ok((range, err));
            }
            if fa.fits(&total_pre, self.rounding) {
                self.layout.formats.insert(ExprKey(e.clone()), fa);
                self.layout.totals.insert(ExprKey(e.clone()), total_pre);
                return Ok((range, err));
            }
            // -min_int does not fit; re-format and charge the shift.
            let fa_bits = fa.frac_bits;
            let (fmt, rho, total) =
                self.settle_format(e, &total_pre, |f| self.shift_rho(fa_bits, f.frac_bits))?;
            let err = err.add(&AffineForm::symmetric(rho, self.ctx));
            self.layout.formats.insert(ExprKey(e.clone()), fmt);
            self.layout.totals.insert(ExprKey(e.clone()), total);
            return Ok((range, err));
        }
        self.check_float_extremes(e, &total_pre)?;
        self.layout.totals.insert(ExprKey(e.clone()), total_pre);
        Ok((range, err))
    }

    fn finish_linear(
        &mut self,
        e: &RcExpr,
        a: &RcExpr,
        b: &RcExpr,
        pre: AffineForm,
    ) -> Result<(Interval, AffineForm), AnalysisError> {
        let range = self.range_of(e);
        let total_pre = range.add(&pre.to_interval());
        if self.prec.is_float() {
            // Additions that land in the subnormal zone are exact, so the
            // relative model needs no absolute floor here.
            let delta = self.prec.unit_roundoff().expect("float precision");
            let rho = &delta * &total_pre.max_abs();
            return self.finish_float(e, range, pre, total_pre, rho);
        }
        let fa = self.fmt_of(a).frac_bits;
        let fb = self.fmt_of(b).frac_bits;
        let g = fa.min(fb);
        let rounding = self.rounding;
        let rho_of = move |fmt: &FixedFormat| {
            let mut rho = Rat::zero();
            if fa != fb {
                // The finer operand is right-shifted down to g.
                rho = &rho
                    + &match rounding {
                        FixedRounding::Truncate => &Rat::pow2(-g) - &Rat::pow2(-fa.max(fb)),
                        FixedRounding::Nearest => Rat::pow2(-(g + 1)),
                    };
            }
            if fmt.frac_bits < g {
                rho = &rho
                    + &match rounding {
                        FixedRounding::Truncate => {
                            &Rat::pow2(-fmt.frac_bits) - &Rat::pow2(-g)
                        }
                        FixedRounding::Nearest => Rat::pow2(-(fmt.frac_bits + 1)),
                    };
            }
            rho
        };
        self.finish_fixed(e, range, pre, total_pre, rho_of)
    }

    fn finish_nonlinear(
        &mut self,
        e: &RcExpr,
        pre: AffineForm,
    ) -> Result<(Interval, AffineForm), AnalysisError> {
        let range = self.range_of(e);
        let total_pre = range.add(&pre.to_interval());
        if self.prec.is_float() {
            // Multiplicative ops can produce subnormals whose error the
            // relative model misses; add the absolute half-ulp floor.
            let delta = self.prec.unit_roundoff().expect("float precision");
            let eta = self.prec.subnormal_eta().expect("float precision");
            let rho = &(&delta * &total_pre.max_abs()) + &eta;
            return self.finish_float(e, range, pre, total_pre, rho);
        }
        let (fa, fb) = match &e.kind {
            ExprKind::Mul(a, b) => (self.fmt_of(a).frac_bits, self.fmt_of(b).frac_bits),
            ExprKind::Div(a, b) => (self.fmt_of(a).frac_bits, self.fmt_of(b).frac_bits),
            _ => unreachable!("fixed sqrt rejected earlier"),
        };
        let is_mul = matches!(e.kind, ExprKind::Mul(..));
        let rounding = self.rounding;
        let rho_of = move |fmt: &FixedFormat| {
            if is_mul {
                let t = fa + fb - fmt.frac_bits;
                if t <= 0 {
                    Rat::zero()
                } else {
                    match rounding {
                        FixedRounding::Truncate => {
                            &Rat::pow2(-fmt.frac_bits) - &Rat::pow2(-(fa + fb))
                        }
                        FixedRounding::Nearest => Rat::pow2(-(fmt.frac_bits + 1)),
                    }
                }
            } else {
                // One truncating integer division in both rounding modes.
                Rat::pow2(-fmt.frac_bits)
            }
        };
        self.finish_fixed(e, range, pre, total_pre, rho_of)
    }

    fn finish_float(
        &mut self,
        e: &RcExpr,
        range: Interval,
        pre: AffineForm,
        total_pre: Interval,
        rho: Rat,
    ) -> Result<(Interval, AffineForm), AnalysisError> {
        let err = pre.add(&AffineForm::symmetric(rho.clone(), self.ctx));
        let total = Interval::new(total_pre.lo() - &rho, total_pre.hi() + &rho);
        self.check_float_extremes(e, &total)?;
        self.layout.totals.insert(ExprKey(e.clone()), total);
        Ok((range, err))
    }

    fn finish_fixed(
        &mut self,
        e: &RcExpr,
        range: Interval,
        pre: AffineForm,
        total_pre: Interval,
        rho_of: impl Fn(&FixedFormat) -> Rat,
    ) -> Result<(Interval, AffineForm), AnalysisError> {
        let (fmt, rho, total) = if let Some(f) = self.forced_format(e) {
            let rho = rho_of(&f);
            let total = Interval::new(total_pre.lo() - &rho, total_pre.hi() + &rho);
            (f, rho, total)
        } else {
            self.settle_format(e, &total_pre, rho_of)?
        };
        let err = pre.add(&AffineForm::symmetric(rho, self.ctx));
        self.layout.formats.insert(ExprKey(e.clone()), fmt);
        self.layout.totals.insert(ExprKey(e.clone()), total);
        Ok((range, err))
    }

    // Largest-f format that holds the node's values including its own
    // quantization; widening by rho can cost a fractional bit, so iterate.
    fn settle_format(
        &self,
        e: &RcExpr,
        total_pre: &Interval,
        rho_of: impl Fn(&FixedFormat) -> Rat,
    ) -> Result<(FixedFormat, Rat, Interval), AnalysisError> {
        let bits = self.prec.bit_width().expect("fixed precision");
        let mut fmt = fixed_format_for(total_pre, bits, self.rounding)
            .map_err(|of| AnalysisError::overflow(e, &of))?;
        for _ in 0..8 {
            let rho = rho_of(&fmt);
            let total = Interval::new(total_pre.lo() - &rho, total_pre.hi() + &rho);
            if fmt.fits(&total, self.rounding) {
                return Ok((fmt, rho, total));
            }
            let next = fixed_format_for(&total, bits, self.rounding)
                .map_err(|of| AnalysisError::overflow(e, &of))?;
            if next.frac_bits >= fmt.frac_bits {
                return Ok((next, rho, total));
            }
            fmt = next;
        }
        let rho = rho_of(&fmt);
        let total = Interval::new(total_pre.lo() - &rho, total_pre.hi() + &rho);
        Ok((fmt, rho, total))
    }

    fn format_for(&self, e: &RcExpr, range: &Interval) -> Result<FixedFormat, AnalysisError> {
        if let Some(f) = self.forced_format(e) {
            return Ok(f);
        }
        let bits = self.prec.bit_width().expect("fixed precision");
        fixed_format_for(range, bits, self.rounding).map_err(|of| AnalysisError::overflow(e, &of))
    }

    fn forced_format(&self, e: &RcExpr) -> Option<FixedFormat> {
        self.fmt_override
            .and_then(|m| m.get(&ExprKey(e.clone())))
            .copied()
    }

    fn fmt_of(&self, e: &RcExpr) -> FixedFormat {
        *self
            .layout
            .formats
            .get(&ExprKey(e.clone()))
            .expect("operand format recorded")
    }

    // Error of one arithmetic right shift from f_src to f_dst (exact when
    // shifting left, i.e. f_dst >= f_src).
    fn shift_rho(&self, f_src: i64, f_dst: i64) -> Rat {
        if f_dst >= f_src {
            return Rat::zero();
        }
        match self.rounding {
            FixedRounding::Truncate => &Rat::pow2(-f_dst) - &Rat::pow2(-f_src),
            FixedRounding::Nearest => Rat::pow2(-(f_dst + 1)),
        }
    }

    fn check_float_extremes(
        &mut self,
        e: &RcExpr,
        total: &Interval,
    ) -> Result<(), AnalysisError> {
        let max = self.prec.max_finite().expect("float precision");
        let abs = total.max_abs();
        if abs > max {
            return Err(AnalysisError::Overflow {
                node: clip(e),
                detail: format!("magnitude may reach {}", abs.to_decimal(4, crate::rational::Dir::Up)),
            });
        }
        let mn = self.prec.min_normal().expect("float precision");
        if !abs.is_zero() && abs < mn {
            self.diags.push(Diagnostic::new(
                DiagnosticKind::Subnormal,
                format!("`{}` evaluates entirely in the subnormal range", clip(e)),
            ));
        }
        Ok(())
    }
}

fn is_zero_const(e: &RcExpr) -> bool {
    matches!(&e.kind, ExprKind::Const(c) if c.is_zero())
}

/// Roundoff of one finite-precision evaluation over `domain`, with no
/// initial errors: the σ of the separation. Returns the real result range
/// and the error bound, plus layout/diagnostics for reuse.
pub fn roundoff_only(
    engine: &RangeEngine<'_>,
    domain: &InputDomain,
    expr: &RcExpr,
    prec: Precision,
    rounding: FixedRounding,
) -> Result<(Interval, Rat, ErrorWalk), AnalysisError> {
    let ctx = NoiseCtx::new();
    let zeros = BTreeMap::new();
    let hull = domain.boxes.clone();
    let walk = error_walk(
        engine, domain, expr, prec, rounding, &zeros, &hull, None, &ctx,
    )?;
    let range = walk.range.clone();
    let bound = walk.max_error();
    Ok((range, bound, walk))
}

/// Propagation of the input errors through the real-valued function:
/// Σ K_i λ_i with K_i bounding |∂f/∂x_i| over the error-inflated domain.
pub fn propagate_initial_errors(
    engine: &RangeEngine<'_>,
    domain: &InputDomain,
    explicit_actual: &BTreeMap<Sym, Interval>,
    expr: &RcExpr,
    lambda: &BTreeMap<Sym, Rat>,
) -> Result<(Rat, Vec<(Sym, Rat)>), AnalysisError> {
    let infl = inflated_domain(engine, domain, lambda, explicit_actual);
    let flat = expr.inline_lets();
    let params: Vec<Sym> = domain.vars.clone();
    let ks = symdiff::bound_jacobian(engine, &flat, &params, &infl).map_err(|e| {
        AnalysisError::UnboundedDerivative {
            var: "input".into(),
            detail: e.to_string(),
        }
    })?;
    let mut total = Rat::zero();
    let mut out = Vec::with_capacity(params.len());
    for (p, k) in params.iter().zip(ks) {
        let l = lambda.get(p).cloned().unwrap_or_else(Rat::zero);
        total = &total + &(&k * &l);
        out.push((p.clone(), k));
    }
    Ok((total, out))
}

/// Total error of a straight-line body: min of the separation route and
/// the affine route, both sound. Returns the report plus the node layout
/// of the affine walk (the layout code emission must reproduce).
pub fn total_error_straightline(
    engine: &RangeEngine<'_>,
    domain: &InputDomain,
    explicit_actual: &BTreeMap<Sym, Interval>,
    expr: &RcExpr,
    lambda: &BTreeMap<Sym, Rat>,
    prec: Precision,
    rounding: FixedRounding,
) -> Result<(ErrorReport, NodeLayout), AnalysisError> {
    let flat = expr.inline_lets();
    let ctx = NoiseCtx::new();

    // Storage hull per input: inflated real range, and the declared actual
    // range when present (runtime guards admit exactly this interval).
    let mut var_hull = BTreeMap::new();
    for (v, iv) in &domain.boxes {
        let l = lambda.get(v).cloned().unwrap_or_else(Rat::zero);
        let mut hull = Interval::new(iv.lo() - &l, iv.hi() + &l);
        if let Some(act) = explicit_actual.get(v) {
            hull = hull.hull(act);
        }
        var_hull.insert(v.clone(), hull);
    }

    // Affine route: one walk with the input errors as initial noise.
    let affine_walk = error_walk(
        engine, domain, &flat, prec, rounding, lambda, &var_hull, None, &ctx,
    )?;
    let total_affine = affine_walk.max_error();
    let mut diagnostics = affine_walk.diagnostics.clone();

    let no_initial = lambda.values().all(|l| l.is_zero()) && explicit_actual.is_empty();

    // Separation route: K·λ plus roundoff over the noisy input ranges,
    // with the emitted (affine-walk) fixed formats forced so σ models the
    // code that will actually run.
    let mut k_vec: Vec<(Sym, Rat)> = Vec::new();
    let mut propagation = Rat::zero();
    let mut k_ok = true;
    match propagate_initial_errors(engine, domain, explicit_actual, &flat, lambda) {
        Ok((p, ks)) => {
            propagation = p;
            k_vec = ks;
        }
        Err(err) => {
            k_ok = false;
            diagnostics.push(Diagnostic::new(
                DiagnosticKind::UnboundedDerivative,
                format!("propagation coefficients unavailable: {err}"),
            ));
        }
    }

    let sigma;
    if no_initial {
        sigma = total_affine.clone();
    } else {
        let infl = inflated_domain(engine, domain, lambda, explicit_actual);
        let zeros = BTreeMap::new();
        let fmt_override = if prec.is_fixed() {
            Some(&affine_walk.layout.formats)
        } else {
            None
        };
        let sigma_walk = error_walk(
            engine,
            &infl,
            &flat,
            prec,
            rounding,
            &zeros,
            &var_hull,
            fmt_override,
            &ctx,
        )?;
        sigma = sigma_walk.max_error();
        diagnostics.extend(sigma_walk.diagnostics);
    }

    let total = if k_ok {
        Rat::min_of(&(&propagation + &sigma), &total_affine)
    } else {
        total_affine.clone()
    };

    let result_range = affine_walk.range.clone();
    let relative_error = if result_range.contains_zero() {
        None
    } else {
        let min_abs = Rat::min_of(&result_range.lo().abs(), &result_range.hi().abs());
        Some(&total / &min_abs)
    };

    diagnostics.sort();
    diagnostics.dedup();

    Ok((
        ErrorReport {
            total_error: total,
            roundoff_part: sigma,
            propagation_part: propagation,
            k: k_vec,
            result_range,
            relative_error,
            diagnostics,
        },
        affine_walk.layout,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certify::BuiltinCertifier;
    use crate::parser::parse_expr;
    use crate::range::RangeConfig;
    use std::sync::Arc;

    fn sym(s: &str) -> Sym {
        Arc::from(s)
    }

    fn dom(entries: &[(&str, &str, &str)]) -> InputDomain {
        let mut boxes = BTreeMap::new();
        let mut vars = Vec::new();
        for (v, lo, hi) in entries {
            vars.push(sym(v));
            boxes.insert(
                sym(v),
                Interval::new(lo.parse().unwrap(), hi.parse().unwrap()),
            );
        }
        InputDomain::new(vars, boxes, vec![])
    }

    fn lam(entries: &[(&str, &str)]) -> BTreeMap<Sym, Rat> {
        entries
            .iter()
            .map(|(v, l)| (sym(v), l.parse().unwrap()))
            .collect()
    }

    #[test]
    fn single_add_roundoff_is_one_ulp_of_two() {
        let cert = BuiltinCertifier;
        let eng = RangeEngine::new(&cert, RangeConfig::default());
        let d = dom(&[("x", "0", "1"), ("y", "0", "1")]);
        let e = parse_expr("x + y").unwrap();
        let (report, _) = total_error_straightline(
            &eng,
            &d,
            &BTreeMap::new(),
            &e,
            &BTreeMap::new(),
            Precision::Float64,
            FixedRounding::Truncate,
        )
        .unwrap();
        // One addition of values bounded by 2: exactly 2^-53 * 2.
        assert_eq!(report.total_error, Rat::pow2(-52));
        assert_eq!(report.result_range, Interval::from_ints(0, 2));
    }

    #[test]
    fn identity_keeps_initial_error_exactly() {
        let cert = BuiltinCertifier;
        let eng = RangeEngine::new(&cert, RangeConfig::default());
        let d = dom(&[("x", "-1", "1")]);
        let e = parse_expr("x").unwrap();
        let l = lam(&[("x", "1e-3")]);
        let (report, _) = total_error_straightline(
            &eng,
            &d,
            &BTreeMap::new(),
            &e,
            &l,
            Precision::Float64,
            FixedRounding::Truncate,
        )
        .unwrap();
        assert_eq!(report.total_error, "1e-3".parse().unwrap());
        assert_eq!(report.propagation_part, "1e-3".parse().unwrap());
    }

    #[test]
    fn linear_scaling_propagates_exactly() {
        let cert = BuiltinCertifier;
        let eng = RangeEngine::new(&cert, RangeConfig::default());
        let d = dom(&[("x", "0", "1")]);
        let e = parse_expr("2.0 * x").unwrap();
        let l = lam(&[("x", "1e-6")]);
        let (prop, ks) =
            propagate_initial_errors(&eng, &d, &BTreeMap::new(), &e, &l).unwrap();
        assert_eq!(prop, "2e-6".parse().unwrap());
        assert_eq!(ks[0].1, Rat::from_int(2));
    }

    #[test]
    fn constrained_jacobian_tightens() {
        // f = x*y - x*x over x in [1,5], y in [-1,2] with x < y: the
        // constraint caps |df/dx| = |y - 2x| far below the naive 11.
        let cert = BuiltinCertifier;
        let eng = RangeEngine::new(&cert, RangeConfig::default());
        let mut d = dom(&[("x", "1", "5"), ("y", "-1", "2")]);
        d.constraints.push(Cond::new(
            parse_expr("x").unwrap(),
            crate::ast::RelOp::Lt,
            parse_expr("y").unwrap(),
        ));
        let e = parse_expr("x*y - x*x").unwrap();
        let l = lam(&[("x", "1e-9"), ("y", "1e-9")]);
        let (_, ks) = propagate_initial_errors(&eng, &d, &BTreeMap::new(), &e, &l).unwrap();
        let kx = &ks[0].1;
        let ky = &ks[1].1;
        let cap: Rat = "5.5".parse().unwrap();
        assert!(kx <= &cap, "K_x = {kx}");
        assert!(kx >= &Rat::from_int(2), "K_x = {kx} undershoots the true sup");
        let cap_y: Rat = "2.001".parse().unwrap();
        assert!(ky <= &cap_y, "K_y = {ky}");
    }

    #[test]
    fn fixed_add_error_is_exact_quantization_sum() {
        let cert = BuiltinCertifier;
        let eng = RangeEngine::new(&cert, RangeConfig::default());
        let d = dom(&[("x", "0", "1"), ("y", "0", "1")]);
        let e = parse_expr("x + y").unwrap();
        // Inputs at f=14 (16-bit holding [0, 1+2^-14]), result at f=13:
        // initial errors 2 * 2^-14, final shift adds 2^-13 - 2^-14.
        let lx = default_initial_error(
            Precision::Fixed16,
            FixedRounding::Truncate,
            &Interval::from_ints(0, 1),
            None,
        )
        .unwrap();
        assert_eq!(lx, Rat::pow2(-14));
        let mut l = BTreeMap::new();
        l.insert(sym("x"), lx.clone());
        l.insert(sym("y"), lx.clone());
        let (report, layout) = total_error_straightline(
            &eng,
            &d,
            &BTreeMap::new(),
            &e,
            &l,
            Precision::Fixed16,
            FixedRounding::Truncate,
        )
        .unwrap();
        let expected = &Rat::from_int(3) * &Rat::pow2(-14);
        assert_eq!(report.total_error, expected);
        let root_fmt = layout.formats.get(&ExprKey(e.inline_lets())).unwrap();
        assert_eq!(root_fmt.frac_bits, 13);
    }

    #[test]
    fn float32_overflow_detected() {
        let cert = BuiltinCertifier;
        let eng = RangeEngine::new(&cert, RangeConfig::default());
        let d = dom(&[("x", "1e30", "1e38")]);
        let e = parse_expr("x * x").unwrap();
        let r = total_error_straightline(
            &eng,
            &d,
            &BTreeMap::new(),
            &e,
            &BTreeMap::new(),
            Precision::Float32,
            FixedRounding::Truncate,
        );
        match r {
            Err(AnalysisError::Overflow { .. }) => {}
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn division_by_error_straddled_denominator_rejected() {
        let cert = BuiltinCertifier;
        let eng = RangeEngine::new(&cert, RangeConfig::default());
        let d = dom(&[("x", "1", "2"), ("y", "0.001", "1")]);
        let e = parse_expr("x / y").unwrap();
        let l = lam(&[("x", "0"), ("y", "0.01")]);
        let r = total_error_straightline(
            &eng,
            &d,
            &BTreeMap::new(),
            &e,
            &l,
            Precision::Float64,
            FixedRounding::Truncate,
        );
        match r {
            Err(AnalysisError::Range(RangeError::Runtime { kind, .. })) => {
                assert_eq!(kind, crate::range::RuntimeErrorKind::DivisionByZero)
            }
            other => panic!("expected division risk, got {other:?}"),
        }
    }

    #[test]
    fn sqrt_error_bounded_by_slope() {
        let cert = BuiltinCertifier;
        let eng = RangeEngine::new(&cert, RangeConfig::default());
        let d = dom(&[("x", "1", "4")]);
        let e = parse_expr("sqrt(x)").unwrap();
        let l = lam(&[("x", "0.1")]);
        let (report, _) = total_error_straightline(
            &eng,
            &d,
            &BTreeMap::new(),
            &e,
            &l,
            Precision::Float64,
            FixedRounding::Truncate,
        )
        .unwrap();
        // Slope of sqrt on [0.9, 4.1] is at most 1/(2*sqrt(0.9)) < 0.5272.
        let hi: Rat = "0.053".parse().unwrap();
        let lo: Rat = "0.024".parse().unwrap();
        assert!(report.total_error <= hi, "{}", report.total_error);
        assert!(report.total_error >= lo, "{}", report.total_error);
    }

    #[test]
    fn sqrt_with_negative_reach_rejected() {
        let cert = BuiltinCertifier;
        let eng = RangeEngine::new(&cert, RangeConfig::default());
        let d = dom(&[("x", "0", "4")]);
        let e = parse_expr("sqrt(x)").unwrap();
        let l = lam(&[("x", "0.1")]);
        let r = total_error_straightline(
            &eng,
            &d,
            &BTreeMap::new(),
            &e,
            &l,
            Precision::Float64,
            FixedRounding::Truncate,
        );
        match r {
            Err(AnalysisError::Range(RangeError::Runtime { kind, .. })) => {
                assert_eq!(kind, crate::range::RuntimeErrorKind::NegativeSqrt)
            }
            other => panic!("expected negative-sqrt risk, got {other:?}"),
        }
    }

    #[test]
    fn fixed_sqrt_unsupported() {
        let cert = BuiltinCertifier;
        let eng = RangeEngine::new(&cert, RangeConfig::default());
        let d = dom(&[("x", "1", "4")]);
        let e = parse_expr("sqrt(x)").unwrap();
        let r = total_error_straightline(
            &eng,
            &d,
            &BTreeMap::new(),
            &e,
            &BTreeMap::new(),
            Precision::Fixed32,
            FixedRounding::Truncate,
        );
        assert!(matches!(r, Err(AnalysisError::UnsupportedFixed("sqrt"))));
    }

    #[test]
    fn monotone_in_initial_error() {
        let cert = BuiltinCertifier;
        let eng = RangeEngine::new(&cert, RangeConfig::default());
        let d = dom(&[("x", "-1", "1")]);
        let e = parse_expr("x*x - 0.5*x").unwrap();
        let mut prev = Rat::zero();
        for l in ["0", "1e-8", "1e-4", "1e-2"] {
            let lm = lam(&[("x", l)]);
            let (report, _) = total_error_straightline(
                &eng,
                &d,
                &BTreeMap::new(),
                &e,
                &lm,
                Precision::Float64,
                FixedRounding::Truncate,
            )
            .unwrap();
            assert!(
                report.total_error >= prev,
                "λ={l}: {} < {prev}",
                report.total_error
            );
            prev = report.total_error;
        }
    }

    #[test]
    fn cancellation_favors_affine_route() {
        // x - x: the affine route sees perfect correlation, the separation
        // route at least stays sound; the min must be (near) the roundoff.
        let cert = BuiltinCertifier;
        let eng = RangeEngine::new(&cert, RangeConfig::default());
        let d = dom(&[("x", "0", "1")]);
        let e = parse_expr("x - x").unwrap();
        let l = lam(&[("x", "1e-6")]);
        let (report, _) = total_error_straightline(
            &eng,
            &d,
            &BTreeMap::new(),
            &e,
            &l,
            Precision::Float64,
            FixedRounding::Truncate,
        )
        .unwrap();
        // Affine route: e_x - e_x = 0, plus one subtraction rounding over
        // a near-zero range. Total must be far below the naive 2e-6.
        let cap: Rat = "1e-9".parse().unwrap();
        assert!(report.total_error <= cap, "{}", report.total_error);
    }

    #[test]
    fn constants_carry_exact_representation_error() {
        let cert = BuiltinCertifier;
        let eng = RangeEngine::new(&cert, RangeConfig::default());
        let d = dom(&[("x", "0", "1")]);
        // 0.1 is not a binary float; x * 0.1 picks up its representation
        // error scaled by |x| <= 1 plus one rounding.
        let e = parse_expr("x * 0.1").unwrap();
        let (report, _) = total_error_straightline(
            &eng,
            &d,
            &BTreeMap::new(),
            &e,
            &BTreeMap::new(),
            Precision::Float64,
            FixedRounding::Truncate,
        )
        .unwrap();
        let tenth: Rat = "0.1".parse().unwrap();
        let repr = Rat::from_f64(tenth.to_f64()).unwrap();
        let c_err = (&repr - &tenth).abs();
        assert!(!c_err.is_zero());
        assert!(report.total_error >= c_err);
        let cap = &(&c_err + &Rat::pow2(-53)) * &Rat::from_int(2);
        assert!(report.total_error <= cap, "{}", report.total_error);
    }

    #[test]
    fn relative_error_present_iff_range_excludes_zero() {
        let cert = BuiltinCertifier;
        let eng = RangeEngine::new(&cert, RangeConfig::default());
        let d = dom(&[("x", "1", "2")]);
        let e = parse_expr("x + 1.0").unwrap();
        let (report, _) = total_error_straightline(
            &eng,
            &d,
            &BTreeMap::new(),
            &e,
            &BTreeMap::new(),
            Precision::Float64,
            FixedRounding::Truncate,
        )
        .unwrap();
        assert!(report.relative_error.is_some());
        let e2 = parse_expr("x - 1.5").unwrap();
        let (report2, _) = total_error_straightline(
            &eng,
            &d,
            &BTreeMap::new(),
            &e2,
            &BTreeMap::new(),
            Precision::Float64,
            FixedRounding::Truncate,
        )
        .unwrap();
        assert!(report2.relative_error.is_none());
    }
}
