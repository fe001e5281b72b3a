//! Semantic lowering: raw parse trees to analyzable function definitions.
//!
//! This stage decomposes `require` clauses into per-variable ranges, actual
//! (roundoff-inflated) ranges, initial uncertainties, and residual
//! constraints; inlines calls to other functions; and recognizes the bounded
//! self-recursion pattern as a loop body.

use crate::ast::{Cond, Expr, ExprKind, Pred, RcExpr, RelOp, Sym};
use crate::interval::Interval;
use crate::parser::{self, PType, RawFn, RawPred, RawStmts, RawTail, SyntaxError};
use crate::rational::Rat;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FrontendError {
    #[error("syntax error: {0}")]
    Syntax(#[from] SyntaxError),
    #[error("{func}: duplicate definition")]
    DuplicateDefinition { func: String },
    #[error("{func}: no finite range declared for input `{var}`")]
    MissingRange { func: String, var: String },
    #[error("{func}: range for `{var}` is empty (lower bound exceeds upper)")]
    EmptyRange { func: String, var: String },
    #[error("{func}: declared range of `{var}` must lie within its actual range")]
    ActualRangeMismatch { func: String, var: String },
    #[error("{func}: uncertainty `+/-` declared for unknown input `{var}`")]
    BadUncertainty { func: String, var: String },
    #[error("{func}: `{var}` is not an input or local binding")]
    UnknownVariable { func: String, var: String },
    #[error("{func}: call to undefined function `{callee}`")]
    UnknownFunction { func: String, callee: String },
    #[error("call cycle involving `{func}` (unbounded recursion is not supported)")]
    RecursiveCall { func: String },
    #[error("{func}: call to `{callee}` with {got} arguments, expected {expected}")]
    ArityMismatch {
        func: String,
        callee: String,
        expected: usize,
        got: usize,
    },
    #[error("{func}: only straight-line single-result functions can be called; `{callee}` is not")]
    UnsupportedCallee { func: String, callee: String },
    #[error("{func}: malformed loop: {why}")]
    MalformedLoop { func: String, why: String },
    #[error("{func}: result has {got} component(s), declared {expected}")]
    ResultArity {
        func: String,
        expected: usize,
        got: usize,
    },
    #[error("{func}: constraints over `~` (actual) values are limited to plain range bounds")]
    UnsupportedActualConstraint { func: String },
}

/// Function body after lowering.
#[derive(Clone, Debug)]
pub enum Body {
    /// Straight-line arithmetic; one expression per output.
    Straight(Vec<RcExpr>),
    /// Conditional tree with straight-line leaves.
    Branch(BranchTree),
    /// Bounded iteration: `count` applications of the state update.
    Loop { count: u64, step: Vec<RcExpr> },
}

#[derive(Clone, Debug)]
pub enum BranchTree {
    Leaf(Vec<RcExpr>),
    Node {
        cond: Pred,
        then_b: Box<BranchTree>,
        else_b: Box<BranchTree>,
    },
}

/// A lowered function ready for analysis.
#[derive(Clone, Debug)]
pub struct FunctionDef {
    pub name: Sym,
    /// Real-valued inputs in declaration order (the loop state, if a loop).
    pub params: Vec<Sym>,
    /// Iteration counter parameter, for loops.
    pub counter: Option<Sym>,
    /// Declared ideal (real-semantics) input ranges.
    pub real_ranges: BTreeMap<Sym, Interval>,
    /// Declared ranges of the finite-precision (actual) values, where given.
    pub actual_ranges: BTreeMap<Sym, Interval>,
    /// Declared initial absolute uncertainties.
    pub initial_errors: BTreeMap<Sym, Rat>,
    /// Residual precondition constraints beyond plain range bounds.
    pub extra: Vec<Pred>,
    pub body: Body,
    /// Target error bound from the `ensuring` clause, if any.
    pub post_error: Option<Rat>,
    pub line: u32,
}

/// One control-flow path: conditions that must hold, and the outputs
/// computed along it.
#[derive(Clone, Debug)]
pub struct Path {
    pub conds: Vec<Cond>,
    pub outputs: Vec<RcExpr>,
}

#[derive(Clone, Debug)]
pub struct Program {
    pub functions: Vec<FunctionDef>,
}

impl Program {
    pub fn parse(src: &str) -> Result<Program, FrontendError> {
        lower_program(parser::parse_program(src)?)
    }

    pub fn get(&self, name: &str) -> Option<&FunctionDef> {
        self.functions.iter().find(|f| f.name.as_ref() == name)
    }
}

impl FunctionDef {
    /// All leaf control-flow paths, conditions normalized to conjunctions of
    /// comparisons (compound predicates are split disjunct-wise).
    pub fn enumerate_paths(&self) -> Vec<Path> {
        match &self.body {
            Body::Straight(es) => vec![Path {
                conds: Vec::new(),
                outputs: es.clone(),
            }],
            Body::Loop { step, .. } => vec![Path {
                conds: Vec::new(),
                outputs: step.clone(),
            }],
            Body::Branch(tree) => {
                let mut out = Vec::new();
                fn walk(t: &BranchTree, trail: &mut Vec<Pred>, out: &mut Vec<Path>) {
                    match t {
                        BranchTree::Leaf(es) => {
                            let conj = Pred::And(trail.clone());
                            for disjunct in conj.to_dnf() {
                                out.push(Path {
                                    conds: disjunct,
                                    outputs: es.clone(),
                                });
                            }
                        }
                        BranchTree::Node { cond, then_b, else_b } => {
                            trail.push(cond.clone());
                            walk(then_b, trail, out);
                            trail.pop();
                            trail.push(Pred::Not(Box::new(cond.clone())));
                            walk(else_b, trail, out);
                            trail.pop();
                        }
                    }
                }
                walk(tree, &mut Vec::new(), &mut out);
                out
            }
        }
    }

    /// Number of outputs.
    pub fn arity(&self) -> usize {
        match &self.body {
            Body::Straight(es) => es.len(),
            Body::Loop { step, .. } => step.len(),
            Body::Branch(t) => {
                fn first_leaf(t: &BranchTree) -> usize {
                    match t {
                        BranchTree::Leaf(es) => es.len(),
                        BranchTree::Node { then_b, .. } => first_leaf(then_b),
                    }
                }
                first_leaf(t)
            }
        }
    }
}

pub fn lower_program(raw: Vec<RawFn>) -> Result<Program, FrontendError> {
    let mut by_name: HashMap<Sym, RawFn> = HashMap::new();
    let mut order: Vec<Sym> = Vec::new();
    for f in raw {
        if by_name.contains_key(&f.name) {
            return Err(FrontendError::DuplicateDefinition {
                func: f.name.to_string(),
            });
        }
        order.push(f.name.clone());
        by_name.insert(f.name.clone(), f);
    }
    let mut functions = Vec::new();
    for name in &order {
        functions.push(lower_fn(&by_name[name], &by_name)?);
    }
    Ok(Program { functions })
}

fn lower_fn(raw: &RawFn, defs: &HashMap<Sym, RawFn>) -> Result<FunctionDef, FrontendError> {
    let fname = raw.name.to_string();
    let mut params: Vec<Sym> = Vec::new();
    let mut counter: Option<Sym> = None;
    for (p, ty) in &raw.params {
        match ty {
            PType::Real => params.push(p.clone()),
            PType::Int => {
                if counter.is_some() {
                    return Err(FrontendError::MalformedLoop {
                        func: fname.clone(),
                        why: "more than one Int parameter".into(),
                    });
                }
                counter = Some(p.clone());
            }
        }
    }

    // --- precondition decomposition ---
    let mut lo: BTreeMap<Sym, Rat> = BTreeMap::new();
    let mut hi: BTreeMap<Sym, Rat> = BTreeMap::new();
    let mut alo: BTreeMap<Sym, Rat> = BTreeMap::new();
    let mut ahi: BTreeMap<Sym, Rat> = BTreeMap::new();
    let mut initial_errors: BTreeMap<Sym, Rat> = BTreeMap::new();
    let mut extra: Vec<Pred> = Vec::new();

    let mut conjuncts: Vec<&RawPred> = Vec::new();
    fn flatten<'a>(p: &'a RawPred, out: &mut Vec<&'a RawPred>) {
        match p {
            RawPred::And(ps) => {
                for q in ps {
                    flatten(q, out);
                }
            }
            other => out.push(other),
        }
    }
    flatten(&raw.pre, &mut conjuncts);

    // tighten: keep the max of lower bounds / min of upper bounds
    fn put_lo(m: &mut BTreeMap<Sym, Rat>, v: &Sym, b: Rat) {
        match m.get(v) {
            Some(old) if *old >= b => {}
            _ => {
                m.insert(v.clone(), b);
            }
        }
    }
    fn put_hi(m: &mut BTreeMap<Sym, Rat>, v: &Sym, b: Rat) {
        match m.get(v) {
            Some(old) if *old <= b => {}
            _ => {
                m.insert(v.clone(), b);
            }
        }
    }

    for c in conjuncts {
        match c {
            RawPred::Uncert(v, e) => {
                if !params.contains(v) {
                    return Err(FrontendError::BadUncertainty {
                        func: fname.clone(),
                        var: v.to_string(),
                    });
                }
                initial_errors.insert(v.clone(), e.abs());
            }
            RawPred::Rel(cond) => {
                // var-vs-const bound patterns become range entries; strict
                // bounds are absorbed as closed (a sound widening).
                let simple = match (&cond.lhs.kind, &cond.rhs.kind) {
                    (ExprKind::Var(v), ExprKind::Const(k)) => {
                        Some((v.clone(), cond.op, k.clone()))
                    }
                    (ExprKind::Const(k), ExprKind::Var(v)) => {
                        // c <= v is v >= c
                        Some((v.clone(), flip(cond.op), k.clone()))
                    }
                    _ => None,
                };
                match simple {
                    Some((v, op, k)) => {
                        let (is_actual, base) = split_tilde(&v);
                        let (lo_m, hi_m) = if is_actual {
                            (&mut alo, &mut ahi)
                        } else {
                            (&mut lo, &mut hi)
                        };
                        if !params.contains(&base) {
                            return Err(FrontendError::UnknownVariable {
                                func: fname.clone(),
                                var: v.to_string(),
                            });
                        }
                        match op {
                            RelOp::Le | RelOp::Lt => put_hi(hi_m, &base, k),
                            RelOp::Ge | RelOp::Gt => put_lo(lo_m, &base, k),
                        }
                    }
                    None => {
                        if mentions_tilde(cond) {
                            return Err(FrontendError::UnsupportedActualConstraint {
                                func: fname.clone(),
                            });
                        }
                        extra.push(Pred::Rel(cond.clone()));
                    }
                }
            }
            other => {
                let p = other.to_pred().ok_or_else(|| FrontendError::BadUncertainty {
                    func: fname.clone(),
                    var: "<nested>".into(),
                })?;
                if pred_mentions_tilde(&p) {
                    return Err(FrontendError::UnsupportedActualConstraint {
                        func: fname.clone(),
                    });
                }
                extra.push(p);
            }
        }
    }

    let mut real_ranges = BTreeMap::new();
    for p in &params {
        match (lo.get(p), hi.get(p)) {
            (Some(a), Some(b)) => {
                if a > b {
                    return Err(FrontendError::EmptyRange {
                        func: fname.clone(),
                        var: p.to_string(),
                    });
                }
                real_ranges.insert(p.clone(), Interval::new(a.clone(), b.clone()));
            }
            _ => {
                return Err(FrontendError::MissingRange {
                    func: fname.clone(),
                    var: p.to_string(),
                })
            }
        }
    }
    let mut actual_ranges = BTreeMap::new();
    for p in &params {
        if let (Some(a), Some(b)) = (alo.get(p), ahi.get(p)) {
            if a > b {
                return Err(FrontendError::EmptyRange {
                    func: fname.clone(),
                    var: format!("~{p}"),
                });
            }
            let actual = Interval::new(a.clone(), b.clone());
            if !actual.contains_interval(&real_ranges[p]) {
                return Err(FrontendError::ActualRangeMismatch {
                    func: fname.clone(),
                    var: p.to_string(),
                });
            }
            actual_ranges.insert(p.clone(), actual);
        } else if alo.contains_key(p) || ahi.contains_key(p) {
            return Err(FrontendError::MissingRange {
                func: fname.clone(),
                var: format!("~{p}"),
            });
        }
    }

    // --- call inlining & body lowering ---
    let mut stack: Vec<Sym> = vec![raw.name.clone()];
    let body = lower_body(raw, &params, &counter, defs, &mut stack)?;

    // Free-variable discipline: everything reduces to the real parameters.
    let check_expr = |e: &RcExpr, what: &str| -> Result<(), FrontendError> {
        for v in e.free_vars() {
            if !params.contains(&v) {
                return Err(if counter.as_ref() == Some(&v) {
                    FrontendError::MalformedLoop {
                        func: fname.clone(),
                        why: format!("counter `{v}` appears in {what}"),
                    }
                } else {
                    FrontendError::UnknownVariable {
                        func: fname.clone(),
                        var: v.to_string(),
                    }
                });
            }
        }
        Ok(())
    };
    match &body {
        Body::Straight(es) | Body::Loop { step: es, .. } => {
            for e in es {
                check_expr(e, "the result")?;
            }
        }
        Body::Branch(tree) => {
            fn walk<'a>(
                t: &'a BranchTree,
                f: &mut dyn FnMut(&'a RcExpr) -> Result<(), FrontendError>,
                g: &mut dyn FnMut(&'a Pred) -> Result<(), FrontendError>,
            ) -> Result<(), FrontendError> {
                match t {
                    BranchTree::Leaf(es) => {
                        for e in es {
                            f(e)?;
                        }
                        Ok(())
                    }
                    BranchTree::Node { cond, then_b, else_b } => {
                        g(cond)?;
                        walk(then_b, f, g)?;
                        walk(else_b, f, g)
                    }
                }
            }
            walk(
                tree,
                &mut |e| check_expr(e, "the result"),
                &mut |p| {
                    for d in p.to_dnf() {
                        for c in d {
                            check_expr(&c.lhs, "a branch condition")?;
                            check_expr(&c.rhs, "a branch condition")?;
                        }
                    }
                    Ok(())
                },
            )?;
        }
    }
    for p in &extra {
        for d in p.to_dnf() {
            for c in d {
                check_expr(&c.lhs, "a constraint")?;
                check_expr(&c.rhs, "a constraint")?;
            }
        }
    }

    // Loops need an actual range on every state variable before fixed-point
    // or error iteration can run; checked later where it matters so floats
    // without `~` declarations still analyze straight-line bodies.

    let declared = raw.ret_arity;
    let got = match &body {
        Body::Straight(es) => es.len(),
        Body::Loop { step, .. } => step.len(),
        Body::Branch(t) => {
            fn leaf_arities(t: &BranchTree, out: &mut Vec<usize>) {
                match t {
                    BranchTree::Leaf(es) => out.push(es.len()),
                    BranchTree::Node { then_b, else_b, .. } => {
                        leaf_arities(then_b, out);
                        leaf_arities(else_b, out);
                    }
                }
            }
            let mut ar = Vec::new();
            leaf_arities(t, &mut ar);
            if ar.iter().any(|&a| a != ar[0]) {
                return Err(FrontendError::ResultArity {
                    func: fname.clone(),
                    expected: declared,
                    got: *ar.iter().find(|&&a| a != ar[0]).unwrap(),
                });
            }
            ar[0]
        }
    };
    if got != declared {
        return Err(FrontendError::ResultArity {
            func: fname,
            expected: declared,
            got,
        });
    }

    Ok(FunctionDef {
        name: raw.name.clone(),
        params,
        counter,
        real_ranges,
        actual_ranges,
        initial_errors,
        extra,
        body,
        post_error: raw.post_error.clone(),
        line: raw.line,
    })
}

fn flip(op: RelOp) -> RelOp {
    match op {
        RelOp::Lt => RelOp::Gt,
        RelOp::Le => RelOp::Ge,
        RelOp::Gt => RelOp::Lt,
        RelOp::Ge => RelOp::Le,
    }
}

fn split_tilde(v: &Sym) -> (bool, Sym) {
    match v.strip_prefix('~') {
        Some(base) => (true, Arc::from(base)),
        None => (false, v.clone()),
    }
}

fn mentions_tilde(c: &Cond) -> bool {
    c.free_vars().iter().any(|v| v.starts_with('~'))
}

fn pred_mentions_tilde(p: &Pred) -> bool {
    p.free_vars().iter().any(|v| v.starts_with('~'))
}

fn wrap_lets(binds: &[(Sym, RcExpr)], e: RcExpr) -> RcExpr {
    binds
        .iter()
        .rev()
        .fold(e, |acc, (n, v)| Expr::let_in(n.clone(), v.clone(), acc))
}

fn lower_body(
    raw: &RawFn,
    params: &[Sym],
    counter: &Option<Sym>,
    defs: &HashMap<Sym, RawFn>,
    stack: &mut Vec<Sym>,
) -> Result<Body, FrontendError> {
    let fname = raw.name.to_string();
    if let Some(ctr) = counter {
        return lower_loop(raw, params, ctr, defs, stack);
    }
    // Straight-line or branching body; all calls inlined.
    fn build(
        stmts: &RawStmts,
        outer: &[(Sym, RcExpr)],
        raw: &RawFn,
        defs: &HashMap<Sym, RawFn>,
        stack: &mut Vec<Sym>,
    ) -> Result<BranchTree, FrontendError> {
        let mut binds: Vec<(Sym, RcExpr)> = outer.to_vec();
        for (n, v) in &stmts.vals {
            let v = inline_calls_in(v, raw, defs, stack)?;
            binds.push((n.clone(), v));
        }
        match &stmts.tail {
            RawTail::Expr(es) => {
                let mut outs = Vec::new();
                for e in es {
                    let e = inline_calls_in(e, raw, defs, stack)?;
                    outs.push(wrap_lets(&binds, e));
                }
                Ok(BranchTree::Leaf(outs))
            }
            RawTail::If { cond, then_b, else_b } => {
                let cond = map_pred_exprs(cond, &mut |e| {
                    let e2 = inline_calls_in(e, raw, defs, stack)?;
                    Ok(wrap_lets(&binds, e2))
                })?;
                let t = build(then_b, &binds, raw, defs, stack)?;
                let e = build(else_b, &binds, raw, defs, stack)?;
                Ok(BranchTree::Node {
                    cond,
                    then_b: Box::new(t),
                    else_b: Box::new(e),
                })
            }
        }
    }
    let tree = build(&raw.body, &[], raw, defs, stack)?;
    let _ = fname;
    Ok(match tree {
        BranchTree::Leaf(es) => Body::Straight(es),
        node => Body::Branch(node),
    })
}

fn lower_loop(
    raw: &RawFn,
    params: &[Sym],
    ctr: &Sym,
    defs: &HashMap<Sym, RawFn>,
    stack: &mut Vec<Sym>,
) -> Result<Body, FrontendError> {
    let fname = raw.name.to_string();
    let mal = |why: &str| FrontendError::MalformedLoop {
        func: fname.clone(),
        why: why.into(),
    };
    let (cond, then_b, else_b) = match &raw.body.tail {
        RawTail::If { cond, then_b, else_b } => (cond, then_b, else_b),
        _ => return Err(mal("expected `if (counter < bound) ... else ...`")),
    };
    // counter < k (or k > counter)
    let count = match cond {
        Pred::Rel(c) => {
            let k = match (&c.lhs.kind, c.op, &c.rhs.kind) {
                (ExprKind::Var(v), RelOp::Lt, ExprKind::Const(k)) if v == ctr => k.clone(),
                (ExprKind::Const(k), RelOp::Gt, ExprKind::Var(v)) if v == ctr => k.clone(),
                _ => return Err(mal("loop condition must be `counter < constant`")),
            };
            if !k.is_integer() || !k.is_positive() {
                return Err(mal("iteration bound must be a positive integer"));
            }
            u64::try_from(k.trunc_bigint()).map_err(|_| mal("iteration bound too large"))?
        }
        _ => return Err(mal("loop condition must be `counter < constant`")),
    };
    // else branch: the state tuple, verbatim.
    if !else_b.vals.is_empty() {
        return Err(mal("final branch must return the state variables directly"));
    }
    match &else_b.tail {
        RawTail::Expr(es) => {
            if es.len() != params.len() {
                return Err(mal("final branch must return every state variable"));
            }
            for (e, p) in es.iter().zip(params) {
                match &e.kind {
                    ExprKind::Var(v) if v == p => {}
                    _ => return Err(mal("final branch must return the state variables in order")),
                }
            }
        }
        _ => return Err(mal("final branch must return the state variables")),
    }
    // then branch: vals + self-call with updated state and counter + 1.
    let mut binds: Vec<(Sym, RcExpr)> = Vec::new();
    for (n, v) in raw.body.vals.iter().chain(then_b.vals.iter()) {
        binds.push((n.clone(), inline_calls_in(v, raw, defs, stack)?));
    }
    let call = match &then_b.tail {
        RawTail::Expr(es) if es.len() == 1 => &es[0],
        _ => return Err(mal("loop body must end in the recursive call")),
    };
    let (callee, args) = match &call.kind {
        ExprKind::Call(f, args) => (f, args),
        _ => return Err(mal("loop body must end in the recursive call")),
    };
    if callee != &raw.name {
        return Err(mal("loop body must call the function itself"));
    }
    if args.len() != params.len() + 1 {
        return Err(FrontendError::ArityMismatch {
            func: fname.clone(),
            callee: fname.clone(),
            expected: params.len() + 1,
            got: args.len(),
        });
    }
    // last argument: counter + 1
    let last = &args[params.len()];
    let ok_incr = match &last.kind {
        ExprKind::Add(a, b) => {
            matches!((&a.kind, &b.kind), (ExprKind::Var(v), ExprKind::Const(one))
                if v == ctr && *one == Rat::one())
        }
        _ => false,
    };
    if !ok_incr {
        return Err(mal("recursive call must advance the counter by one"));
    }
    let mut step = Vec::new();
    for a in &args[..params.len()] {
        let inlined = inline_calls_in(a, raw, defs, stack)?;
        step.push(wrap_lets(&binds, inlined));
    }
    Ok(Body::Loop { count, step })
}

fn map_pred_exprs(
    p: &Pred,
    f: &mut dyn FnMut(&RcExpr) -> Result<RcExpr, FrontendError>,
) -> Result<Pred, FrontendError> {
    Ok(match p {
        Pred::Rel(c) => Pred::Rel(Cond::new(f(&c.lhs)?, c.op, f(&c.rhs)?)),
        Pred::Not(q) => Pred::Not(Box::new(map_pred_exprs(q, f)?)),
        Pred::And(qs) => Pred::And(
            qs.iter()
                .map(|q| map_pred_exprs(q, f))
                .collect::<Result<_, _>>()?,
        ),
        Pred::Or(qs) => Pred::Or(
            qs.iter()
                .map(|q| map_pred_exprs(q, f))
                .collect::<Result<_, _>>()?,
        ),
    })
}

/// Replace calls to other defined functions by their let-bound bodies.
/// Self-calls are left intact (the loop lowering consumes them).
fn inline_calls_in(
    e: &RcExpr,
    caller: &RawFn,
    defs: &HashMap<Sym, RawFn>,
    stack: &mut Vec<Sym>,
) -> Result<RcExpr, FrontendError> {
    Ok(match &e.kind {
        ExprKind::Var(_) | ExprKind::Const(_) => e.clone(),
        ExprKind::Add(a, b) => Expr::add(
            inline_calls_in(a, caller, defs, stack)?,
            inline_calls_in(b, caller, defs, stack)?,
        ),
        ExprKind::Sub(a, b) => Expr::sub(
            inline_calls_in(a, caller, defs, stack)?,
            inline_calls_in(b, caller, defs, stack)?,
        ),
        ExprKind::Mul(a, b) => Expr::mul(
            inline_calls_in(a, caller, defs, stack)?,
            inline_calls_in(b, caller, defs, stack)?,
        ),
        ExprKind::Div(a, b) => Expr::div(
            inline_calls_in(a, caller, defs, stack)?,
            inline_calls_in(b, caller, defs, stack)?,
        ),
        ExprKind::Sqrt(a) => Expr::sqrt(inline_calls_in(a, caller, defs, stack)?),
        ExprKind::Let { name, value, body } => Expr::let_in(
            name.clone(),
            inline_calls_in(value, caller, defs, stack)?,
            inline_calls_in(body, caller, defs, stack)?,
        ),
        ExprKind::Call(f, args) => {
            if f == &caller.name {
                // Loop self-call; keep for the loop lowering to consume.
                let args = args
                    .iter()
                    .map(|a| inline_calls_in(a, caller, defs, stack))
                    .collect::<Result<Vec<_>, _>>()?;
                return Ok(Expr::call(f.clone(), args));
            }
            if stack.contains(f) {
                return Err(FrontendError::RecursiveCall {
                    func: f.to_string(),
                });
            }
            let callee = defs.get(f).ok_or_else(|| FrontendError::UnknownFunction {
                func: caller.name.to_string(),
                callee: f.to_string(),
            })?;
            // Callee must be straight-line, single result, no Int params.
            let simple = callee.ret_arity == 1
                && callee.params.iter().all(|(_, t)| *t == PType::Real)
                && matches!(callee.body.tail, RawTail::Expr(ref es) if es.len() == 1);
            if !simple {
                return Err(FrontendError::UnsupportedCallee {
                    func: caller.name.to_string(),
                    callee: f.to_string(),
                });
            }
            if args.len() != callee.params.len() {
                return Err(FrontendError::ArityMismatch {
                    func: caller.name.to_string(),
                    callee: f.to_string(),
                    expected: callee.params.len(),
                    got: args.len(),
                });
            }
            // Inline the callee body (recursively, cycle-checked), then
            // rename its locals apart and bind arguments with lets.
            stack.push(f.clone());
            let tail = match &callee.body.tail {
                RawTail::Expr(es) => &es[0],
                _ => unreachable!("checked simple above"),
            };
            let mut body = wrap_lets(&callee.body.vals, tail.clone());
            body = inline_calls_in(&body, callee, defs, stack)?;
            stack.pop();
            // Rename parameters apart to avoid capture by caller bindings.
            let depth = stack.len();
            let mut renamed = body;
            let mut fresh_names = Vec::new();
            for (p, _) in &callee.params {
                let fresh: Sym = Arc::from(format!("{f}${depth}${p}").as_str());
                renamed = renamed.subst(p, &Expr::var_sym(fresh.clone()));
                fresh_names.push(fresh);
            }
            let mut out = renamed;
            // Bind in reverse so the first argument is the outermost let.
            for (fresh, arg) in fresh_names.iter().zip(args).rev() {
                let arg = inline_calls_in(arg, caller, defs, stack)?;
                out = Expr::let_in(fresh.clone(), arg, out);
            }
            out
        }
    })
}

/// Returns the set of variables a lowered body reads (params expected).
pub fn body_inputs(body: &Body) -> HashSet<Sym> {
    let mut s = HashSet::new();
    let mut add = |e: &RcExpr| s.extend(e.free_vars());
    match body {
        Body::Straight(es) | Body::Loop { step: es, .. } => {
            for e in es {
                add(e);
            }
        }
        Body::Branch(t) => {
            fn walk(t: &BranchTree, add: &mut dyn FnMut(&RcExpr)) {
                match t {
                    BranchTree::Leaf(es) => {
                        for e in es {
                            add(e);
                        }
                    }
                    BranchTree::Node { cond, then_b, else_b } => {
                        for d in cond.to_dnf() {
                            for c in d {
                                add(&c.lhs);
                                add(&c.rhs);
                            }
                        }
                        walk(then_b, add);
                        walk(else_b, add);
                    }
                }
            }
            walk(t, &mut add);
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const SINE: &str = r#"
def sine(x: Real): Real = {
  require(-2.0 <= x && x <= 2.0 && x +/- 1e-11)
  x - (x*x*x)/6.0 + (x*x*x*x*x)/120.0 - (x*x*x*x*x*x*x)/5040.0
} ensuring(res => res +/- 1.001e-11)
"#;

    #[test]
    fn sine_lowering() {
        let prog = Program::parse(SINE).unwrap();
        let f = prog.get("sine").unwrap();
        assert_eq!(f.params.len(), 1);
        assert_eq!(
            f.real_ranges["x"],
            Interval::new("-2".parse().unwrap(), "2".parse().unwrap())
        );
        assert_eq!(f.initial_errors["x"], "1e-11".parse().unwrap());
        assert!(f.actual_ranges.is_empty());
        assert!(f.extra.is_empty());
        assert!(matches!(f.body, Body::Straight(ref es) if es.len() == 1));
        assert_eq!(f.post_error, Some("1.001e-11".parse().unwrap()));
    }

    #[test]
    fn missing_range_rejected() {
        let src = "def f(x: Real, y: Real): Real = {\n require(0 <= x && x <= 1)\n x + y\n}";
        match Program::parse(src) {
            Err(FrontendError::MissingRange { var, .. }) => assert_eq!(var, "y"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn loop_lowering() {
        let src = r#"
def pendulum(t: Real, w: Real, n: Int): (Real, Real) = {
  require(-2.0 <= t && t <= 2.0 && -5.0 <= w && w <= 5.0 &&
          -2.01 <= ~t && ~t <= 2.01 && -5.01 <= ~w && ~w <= 5.01)
  if (n < 100) {
    val h = 0.01
    val k1w = -9.80665 * t
    pendulum(t + h * w, w + h * k1w, n + 1)
  } else {
    (t, w)
  }
}
"#;
        let prog = Program::parse(src).unwrap();
        let f = prog.get("pendulum").unwrap();
        assert_eq!(f.params, vec![Arc::from("t") as Sym, Arc::from("w")]);
        assert_eq!(f.counter.as_deref(), Some("n"));
        match &f.body {
            Body::Loop { count, step } => {
                assert_eq!(*count, 100);
                assert_eq!(step.len(), 2);
                // step exprs close over t and w only
                for e in step {
                    let fv = e.free_vars();
                    assert!(fv.iter().all(|v| v.as_ref() == "t" || v.as_ref() == "w"));
                }
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(
            f.actual_ranges["t"],
            Interval::new("-2.01".parse().unwrap(), "2.01".parse().unwrap())
        );
    }

    #[test]
    fn branch_paths_enumerated() {
        let src = r#"
def f(x: Real): Real = {
  require(0.0 <= x && x <= 10.0)
  if (x < 3.0) { x } else if (x < 7.0) { x * 2.0 } else { x * 3.0 }
}
"#;
        let prog = Program::parse(src).unwrap();
        let f = prog.get("f").unwrap();
        let paths = f.enumerate_paths();
        assert_eq!(paths.len(), 3);
        assert_eq!(paths[0].conds.len(), 1);
        assert_eq!(paths[1].conds.len(), 2); // !(x<3) && x<7
        assert_eq!(paths[1].conds[0].op, RelOp::Ge);
        assert_eq!(paths[2].conds.len(), 2);
    }

    #[test]
    fn call_inlining() {
        let src = r#"
def sq(a: Real): Real = {
  require(-10.0 <= a && a <= 10.0)
  a * a
}
def g(x: Real): Real = {
  require(0.0 <= x && x <= 2.0)
  sq(x + 1.0) + 3.0
}
"#;
        let prog = Program::parse(src).unwrap();
        let g = prog.get("g").unwrap();
        match &g.body {
            Body::Straight(es) => {
                let flat = es[0].inline_lets();
                // sq(x+1) + 3 ==> (x+1)*(x+1) + 3
                let x1 = Expr::add(Expr::var("x"), Expr::konst(Rat::one()));
                let expect = Expr::add(
                    Expr::mul(x1.clone(), x1),
                    Expr::konst(Rat::from_int(3)),
                );
                assert!(Expr::same(&flat, &expect), "got {flat}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn recursion_rejected() {
        let src = r#"
def a(x: Real): Real = {
  require(0.0 <= x && x <= 1.0)
  b(x) + 1.0
}
def b(x: Real): Real = {
  require(0.0 <= x && x <= 1.0)
  a(x) * 2.0
}
"#;
        assert!(matches!(
            Program::parse(src),
            Err(FrontendError::RecursiveCall { .. })
        ));
    }

    #[test]
    fn malformed_loop_rejected() {
        // else branch returns the state out of order
        let src = r#"
def f(t: Real, w: Real, n: Int): (Real, Real) = {
  require(0.0 <= t && t <= 1.0 && 0.0 <= w && w <= 1.0)
  if (n < 10) { f(t * 0.5, w, n + 1) } else { (w, t) }
}
"#;
        assert!(matches!(
            Program::parse(src),
            Err(FrontendError::MalformedLoop { .. })
        ));
    }

    #[test]
    fn actual_range_must_contain_real() {
        let src = r#"
def f(x: Real): Real = {
  require(0.0 <= x && x <= 2.0 && 0.5 <= ~x && ~x <= 2.5)
  x
}
"#;
        assert!(matches!(
            Program::parse(src),
            Err(FrontendError::ActualRangeMismatch { .. })
        ));
    }

    #[test]
    fn extra_constraints_survive() {
        let src = r#"
def f(x: Real, y: Real): Real = {
  require(0.0 <= x && x <= 1.0 && 0.0 <= y && y <= 1.0 && x + y <= 1.5 && x < y)
  x * y
}
"#;
        let prog = Program::parse(src).unwrap();
        let f = prog.get("f").unwrap();
        assert_eq!(f.extra.len(), 2);
    }
}
