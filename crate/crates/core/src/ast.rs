//! Expression trees for real-valued arithmetic.
//!
//! Expressions are immutable reference-counted nodes with a cached structural
//! hash, so analyses can memoize per-node results and recover sharing in the
//! DAG (`x*x*x` built from one `x*x` node is costed once, not twice).

use crate::rational::Rat;
use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

/// Interned-ish identifier; cheap to clone, order-comparable.
pub type Sym = Arc<str>;

pub type RcExpr = Arc<Expr>;

#[derive(Clone, Debug)]
pub enum ExprKind {
    Var(Sym),
    Const(Rat),
    Add(RcExpr, RcExpr),
    Sub(RcExpr, RcExpr),
    Mul(RcExpr, RcExpr),
    Div(RcExpr, RcExpr),
    Sqrt(RcExpr),
    Let { name: Sym, value: RcExpr, body: RcExpr },
    /// Call to a named function; eliminated by inlining before analysis.
    Call(Sym, Vec<RcExpr>),
}

#[derive(Clone, Debug)]
pub struct Expr {
    pub kind: ExprKind,
    hash: u64,
}

fn mix(tag: u64, parts: &[u64]) -> u64 {
    // FNV-1a style mixing; deterministic across runs.
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ tag.wrapping_mul(0x100_0000_01b3);
    for p in parts {
        h ^= *p;
        h = h.wrapping_mul(0x100_0000_01b3);
        h ^= h >> 29;
    }
    h
}

fn hash_of<T: Hash>(v: &T) -> u64 {
    // Fixed-key hasher for run-to-run determinism.
    let mut h = std::collections::hash_map::DefaultHasher::new();
    v.hash(&mut h);
    h.finish()
}

impl Expr {
    fn new(kind: ExprKind) -> RcExpr {
        let hash = match &kind {
            ExprKind::Var(s) => mix(1, &[hash_of(&s.as_ref())]),
            ExprKind::Const(c) => mix(2, &[hash_of(c)]),
            ExprKind::Add(a, b) => mix(3, &[a.hash, b.hash]),
            ExprKind::Sub(a, b) => mix(4, &[a.hash, b.hash]),
            ExprKind::Mul(a, b) => mix(5, &[a.hash, b.hash]),
            ExprKind::Div(a, b) => mix(6, &[a.hash, b.hash]),
            ExprKind::Sqrt(a) => mix(7, &[a.hash]),
            ExprKind::Let { name, value, body } => {
                mix(8, &[hash_of(&name.as_ref()), value.hash, body.hash])
            }
            ExprKind::Call(f, args) => {
                let mut parts = vec![hash_of(&f.as_ref())];
                parts.extend(args.iter().map(|a| a.hash));
                mix(9, &parts)
            }
        };
        Arc::new(Expr { kind, hash })
    }

    pub fn var(name: &str) -> RcExpr {
        Expr::new(ExprKind::Var(Arc::from(name)))
    }

    pub fn var_sym(name: Sym) -> RcExpr {
        Expr::new(ExprKind::Var(name))
    }

    pub fn konst(v: Rat) -> RcExpr {
        Expr::new(ExprKind::Const(v))
    }

    pub fn int(v: i64) -> RcExpr {
        Expr::konst(Rat::from_int(v))
    }

    pub fn add(a: RcExpr, b: RcExpr) -> RcExpr {
        Expr::new(ExprKind::Add(a, b))
    }

    pub fn sub(a: RcExpr, b: RcExpr) -> RcExpr {
        Expr::new(ExprKind::Sub(a, b))
    }

    pub fn mul(a: RcExpr, b: RcExpr) -> RcExpr {
        Expr::new(ExprKind::Mul(a, b))
    }

    pub fn div(a: RcExpr, b: RcExpr) -> RcExpr {
        Expr::new(ExprKind::Div(a, b))
    }

    pub fn sqrt(a: RcExpr) -> RcExpr {
        Expr::new(ExprKind::Sqrt(a))
    }

    pub fn let_in(name: Sym, value: RcExpr, body: RcExpr) -> RcExpr {
        Expr::new(ExprKind::Let { name, value, body })
    }

    pub fn call(f: Sym, args: Vec<RcExpr>) -> RcExpr {
        Expr::new(ExprKind::Call(f, args))
    }

    /// Negation as subtraction from an exact zero; analyses treat this
    /// pattern as error-free sign flip.
    pub fn neg(a: RcExpr) -> RcExpr {
        Expr::sub(Expr::konst(Rat::zero()), a)
    }

    pub fn structural_hash(&self) -> u64 {
        self.hash
    }

    /// Deep structural equality with a pointer fast path.
    pub fn same(a: &RcExpr, b: &RcExpr) -> bool {
        if Arc::ptr_eq(a, b) {
            return true;
        }
        if a.hash != b.hash {
            return false;
        }
        match (&a.kind, &b.kind) {
            (ExprKind::Var(x), ExprKind::Var(y)) => x == y,
            (ExprKind::Const(x), ExprKind::Const(y)) => x == y,
            (ExprKind::Add(a1, a2), ExprKind::Add(b1, b2))
            | (ExprKind::Sub(a1, a2), ExprKind::Sub(b1, b2))
            | (ExprKind::Mul(a1, a2), ExprKind::Mul(b1, b2))
            | (ExprKind::Div(a1, a2), ExprKind::Div(b1, b2)) => {
                Expr::same(a1, b1) && Expr::same(a2, b2)
            }
            (ExprKind::Sqrt(x), ExprKind::Sqrt(y)) => Expr::same(x, y),
            (
                ExprKind::Let { name: n1, value: v1, body: b1 },
                ExprKind::Let { name: n2, value: v2, body: b2 },
            ) => n1 == n2 && Expr::same(v1, v2) && Expr::same(b1, b2),
            (ExprKind::Call(f1, a1), ExprKind::Call(f2, a2)) => {
                f1 == f2 && a1.len() == a2.len() && a1.iter().zip(a2).all(|(x, y)| Expr::same(x, y))
            }
            _ => false,
        }
    }

    pub fn free_vars(&self) -> BTreeSet<Sym> {
        let mut out = BTreeSet::new();
        self.collect_free(&mut Vec::new(), &mut out);
        out
    }

    fn collect_free(&self, bound: &mut Vec<Sym>, out: &mut BTreeSet<Sym>) {
        match &self.kind {
            ExprKind::Var(s) => {
                if !bound.contains(s) {
                    out.insert(s.clone());
                }
            }
            ExprKind::Const(_) => {}
            ExprKind::Add(a, b)
            | ExprKind::Sub(a, b)
            | ExprKind::Mul(a, b)
            | ExprKind::Div(a, b) => {
                a.collect_free(bound, out);
                b.collect_free(bound, out);
            }
            ExprKind::Sqrt(a) => a.collect_free(bound, out),
            ExprKind::Let { name, value, body } => {
                value.collect_free(bound, out);
                bound.push(name.clone());
                body.collect_free(bound, out);
                bound.pop();
            }
            ExprKind::Call(_, args) => {
                for a in args {
                    a.collect_free(bound, out);
                }
            }
        }
    }

    /// Substitute let bindings away, leaving a pure arithmetic DAG. Shared
    /// let values keep pointer identity across use sites, so downstream
    /// memoization still sees one node.
    pub fn inline_lets(self: &RcExpr) -> RcExpr {
        fn go(e: &RcExpr, env: &mut HashMap<Sym, RcExpr>) -> RcExpr {
            match &e.kind {
                ExprKind::Var(s) => env.get(s).cloned().unwrap_or_else(|| e.clone()),
                ExprKind::Const(_) => e.clone(),
                ExprKind::Add(a, b) => Expr::add(go(a, env), go(b, env)),
                ExprKind::Sub(a, b) => Expr::sub(go(a, env), go(b, env)),
                ExprKind::Mul(a, b) => Expr::mul(go(a, env), go(b, env)),
                ExprKind::Div(a, b) => Expr::div(go(a, env), go(b, env)),
                ExprKind::Sqrt(a) => Expr::sqrt(go(a, env)),
                ExprKind::Let { name, value, body } => {
                    let v = go(value, env);
                    let shadowed = env.insert(name.clone(), v);
                    let r = go(body, env);
                    match shadowed {
                        Some(old) => {
                            env.insert(name.clone(), old);
                        }
                        None => {
                            env.remove(name);
                        }
                    }
                    r
                }
                ExprKind::Call(f, args) => {
                    Expr::call(f.clone(), args.iter().map(|a| go(a, env)).collect())
                }
            }
        }
        go(self, &mut HashMap::new())
    }

    /// Capture-free substitution of `name := replacement` (expression must be
    /// let-free; used for call inlining with fresh names).
    pub fn subst(self: &RcExpr, name: &Sym, replacement: &RcExpr) -> RcExpr {
        match &self.kind {
            ExprKind::Var(s) => {
                if s == name {
                    replacement.clone()
                } else {
                    self.clone()
                }
            }
            ExprKind::Const(_) => self.clone(),
            ExprKind::Add(a, b) => Expr::add(a.subst(name, replacement), b.subst(name, replacement)),
            ExprKind::Sub(a, b) => Expr::sub(a.subst(name, replacement), b.subst(name, replacement)),
            ExprKind::Mul(a, b) => Expr::mul(a.subst(name, replacement), b.subst(name, replacement)),
            ExprKind::Div(a, b) => Expr::div(a.subst(name, replacement), b.subst(name, replacement)),
            ExprKind::Sqrt(a) => Expr::sqrt(a.subst(name, replacement)),
            ExprKind::Let { name: n, value, body } => {
                let v = value.subst(name, replacement);
                if n == name {
                    Expr::let_in(n.clone(), v, body.clone())
                } else {
                    Expr::let_in(n.clone(), v, body.subst(name, replacement))
                }
            }
            ExprKind::Call(f, args) => Expr::call(
                f.clone(),
                args.iter().map(|a| a.subst(name, replacement)).collect(),
            ),
        }
    }

    /// Count of distinct arithmetic operation nodes in the DAG.
    pub fn op_count(self: &RcExpr) -> usize {
        fn go(e: &RcExpr, seen: &mut HashMap<ExprKey, ()>, n: &mut usize) {
            if seen.insert(ExprKey(e.clone()), ()).is_some() {
                return;
            }
            match &e.kind {
                ExprKind::Var(_) | ExprKind::Const(_) => {}
                ExprKind::Add(a, b)
                | ExprKind::Sub(a, b)
                | ExprKind::Mul(a, b)
                | ExprKind::Div(a, b) => {
                    *n += 1;
                    go(a, seen, n);
                    go(b, seen, n);
                }
                ExprKind::Sqrt(a) => {
                    *n += 1;
                    go(a, seen, n);
                }
                ExprKind::Let { value, body, .. } => {
                    go(value, seen, n);
                    go(body, seen, n);
                }
                ExprKind::Call(_, args) => {
                    for a in args {
                        go(a, seen, n);
                    }
                }
            }
        }
        let mut n = 0;
        go(self, &mut HashMap::new(), &mut n);
        n
    }

    pub fn contains_call(self: &RcExpr) -> bool {
        match &self.kind {
            ExprKind::Call(..) => true,
            ExprKind::Var(_) | ExprKind::Const(_) => false,
            ExprKind::Add(a, b)
            | ExprKind::Sub(a, b)
            | ExprKind::Mul(a, b)
            | ExprKind::Div(a, b) => a.contains_call() || b.contains_call(),
            ExprKind::Sqrt(a) => a.contains_call(),
            ExprKind::Let { value, body, .. } => value.contains_call() || body.contains_call(),
        }
    }

    pub fn contains_sqrt(self: &RcExpr) -> bool {
        match &self.kind {
            ExprKind::Sqrt(_) => true,
            ExprKind::Var(_) | ExprKind::Const(_) => false,
            ExprKind::Add(a, b)
            | ExprKind::Sub(a, b)
            | ExprKind::Mul(a, b)
            | ExprKind::Div(a, b) => a.contains_sqrt() || b.contains_sqrt(),
            ExprKind::Let { value, body, .. } => value.contains_sqrt() || body.contains_sqrt(),
            ExprKind::Call(_, args) => args.iter().any(|a| a.contains_sqrt()),
        }
    }

}

/// Map/set key wrapping an expression: hashes by cached structural hash,
/// compares structurally (pointer fast path first).
#[derive(Clone, Debug)]
pub struct ExprKey(pub RcExpr);

impl PartialEq for ExprKey {
    fn eq(&self, other: &Self) -> bool {
        Expr::same(&self.0, &other.0)
    }
}
impl Eq for ExprKey {}
impl Hash for ExprKey {
    fn hash<H: Hasher>(&self, state: &mut H) {
        state.write_u64(self.0.hash);
    }
}

/// Relational operator in conditions.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum RelOp {
    Lt,
    Le,
    Gt,
    Ge,
}

impl RelOp {
    pub fn negate(self) -> RelOp {
        match self {
            RelOp::Lt => RelOp::Ge,
            RelOp::Le => RelOp::Gt,
            RelOp::Gt => RelOp::Le,
            RelOp::Ge => RelOp::Lt,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            RelOp::Lt => "<",
            RelOp::Le => "<=",
            RelOp::Gt => ">",
            RelOp::Ge => ">=",
        }
    }
}

/// One comparison between real expressions.
#[derive(Clone, Debug)]
pub struct Cond {
    pub lhs: RcExpr,
    pub op: RelOp,
    pub rhs: RcExpr,
}

impl Cond {
    pub fn new(lhs: RcExpr, op: RelOp, rhs: RcExpr) -> Cond {
        Cond { lhs, op, rhs }
    }

    pub fn negate(&self) -> Cond {
        Cond::new(self.lhs.clone(), self.op.negate(), self.rhs.clone())
    }

    /// Normal form: expression `g` and strictness such that the condition
    /// holds iff `g < 0` (strict) or `g <= 0`.
    pub fn as_le_zero(&self) -> (RcExpr, bool) {
        match self.op {
            RelOp::Lt => (Expr::sub(self.lhs.clone(), self.rhs.clone()), true),
            RelOp::Le => (Expr::sub(self.lhs.clone(), self.rhs.clone()), false),
            RelOp::Gt => (Expr::sub(self.rhs.clone(), self.lhs.clone()), true),
            RelOp::Ge => (Expr::sub(self.rhs.clone(), self.lhs.clone()), false),
        }
    }

    /// The boundary expression lhs - rhs (zero at the decision surface).
    pub fn boundary_expr(&self) -> RcExpr {
        Expr::sub(self.lhs.clone(), self.rhs.clone())
    }

    pub fn free_vars(&self) -> BTreeSet<Sym> {
        let mut s = self.lhs.free_vars();
        s.extend(self.rhs.free_vars());
        s
    }

    pub fn inline_lets(&self) -> Cond {
        Cond::new(self.lhs.inline_lets(), self.op, self.rhs.inline_lets())
    }
}

impl fmt::Display for Cond {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.lhs, self.op.symbol(), self.rhs)
    }
}

/// Boolean combination of comparisons (precondition predicates).
#[derive(Clone, Debug)]
pub enum Pred {
    Rel(Cond),
    And(Vec<Pred>),
    Or(Vec<Pred>),
    Not(Box<Pred>),
}

impl Pred {
    /// Disjunctive normal form as a list of conjunctions, negations pushed
    /// onto the comparisons.
    pub fn to_dnf(&self) -> Vec<Vec<Cond>> {
        fn nnf(p: &Pred, neg: bool) -> Pred {
            match p {
                Pred::Rel(c) => Pred::Rel(if neg { c.negate() } else { c.clone() }),
                Pred::Not(q) => nnf(q, !neg),
                Pred::And(qs) => {
                    let parts = qs.iter().map(|q| nnf(q, neg)).collect();
                    if neg {
                        Pred::Or(parts)
                    } else {
                        Pred::And(parts)
                    }
                }
                Pred::Or(qs) => {
                    let parts = qs.iter().map(|q| nnf(q, neg)).collect();
                    if neg {
                        Pred::And(parts)
                    } else {
                        Pred::Or(parts)
                    }
                }
            }
        }
        fn dnf(p: &Pred) -> Vec<Vec<Cond>> {
            match p {
                Pred::Rel(c) => vec![vec![c.clone()]],
                Pred::Not(_) => unreachable!("negations removed by nnf"),
                Pred::Or(qs) => qs.iter().flat_map(dnf).collect(),
                Pred::And(qs) => {
                    let mut acc: Vec<Vec<Cond>> = vec![vec![]];
                    for q in qs {
                        let d = dnf(q);
                        let mut next = Vec::with_capacity(acc.len() * d.len());
                        for a in &acc {
                            for b in &d {
                                let mut row = a.clone();
                                row.extend(b.iter().cloned());
                                next.push(row);
                            }
                        }
                        acc = next;
                    }
                    acc
                }
            }
        }
        dnf(&nnf(self, false))
    }

    pub fn free_vars(&self) -> BTreeSet<Sym> {
        match self {
            Pred::Rel(c) => c.free_vars(),
            Pred::Not(p) => p.free_vars(),
            Pred::And(ps) | Pred::Or(ps) => {
                ps.iter().flat_map(|p| p.free_vars()).collect()
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Pretty printing

#[derive(Clone, Copy, PartialEq, PartialOrd)]
enum Prec {
    Sum,
    Prod,
    Unary,
}

impl Expr {
    fn write_src(&self, f: &mut fmt::Formatter<'_>, outer: Prec, right: bool) -> fmt::Result {
        let mine = match &self.kind {
            ExprKind::Add(..) | ExprKind::Sub(..) => Prec::Sum,
            ExprKind::Mul(..) | ExprKind::Div(..) => Prec::Prod,
            _ => Prec::Unary,
        };
        // Parenthesize when binding looser than context, or equal on the
        // right of a non-associative position (a - (b + c), a / (b * c)).
        let need = (mine < outer) || (mine == outer && right && mine != Prec::Unary);
        if need {
            f.write_str("(")?;
        }
        match &self.kind {
            ExprKind::Var(s) => f.write_str(s)?,
            ExprKind::Const(c) => match c.to_exact_decimal() {
                Some(d) => f.write_str(&d)?,
                None => write!(f, "({} / {})", c.numer(), c.denom())?,
            },
            ExprKind::Add(a, b) => {
                a.write_src(f, Prec::Sum, false)?;
                f.write_str(" + ")?;
                b.write_src(f, Prec::Sum, true)?;
            }
            ExprKind::Sub(a, b) => {
                a.write_src(f, Prec::Sum, false)?;
                f.write_str(" - ")?;
                b.write_src(f, Prec::Sum, true)?;
            }
            ExprKind::Mul(a, b) => {
                a.write_src(f, Prec::Prod, false)?;
                f.write_str(" * ")?;
                b.write_src(f, Prec::Prod, true)?;
            }
            ExprKind::Div(a, b) => {
                a.write_src(f, Prec::Prod, false)?;
                f.write_str(" / ")?;
                b.write_src(f, Prec::Prod, true)?;
            }
            ExprKind::Sqrt(a) => {
                f.write_str("sqrt(")?;
                a.write_src(f, Prec::Sum, false)?;
                f.write_str(")")?;
            }
            ExprKind::Let { .. } => {
                // Lets print as their inlined form; concrete syntax keeps
                // them in statement position, not inside expressions.
                let flat = Arc::new(self.clone()).inline_lets();
                flat.write_src(f, outer, right)?;
                if need {
                    f.write_str(")")?;
                }
                return Ok(());
            }
            ExprKind::Call(name, args) => {
                write!(f, "{name}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    a.write_src(f, Prec::Sum, false)?;
                }
                f.write_str(")")?;
            }
        }
        if need {
            f.write_str(")")?;
        }
        Ok(())
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write_src(f, Prec::Sum, false)
    }
}
