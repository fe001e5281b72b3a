//! Constraint certification over box domains.
//!
//! The built-in certifier decides satisfiability of conjunctions of
//! nonlinear comparisons by branch and bound on the input box. Each box is
//! processed with three sound primitives:
//!
//! 1. an affine relaxation of every constraint (exact rational centers and
//!    coefficients, one scalar residual for nonlinearity),
//! 2. interval/linear-programming refutation: an upper bound on how far a
//!    constraint can be pushed below zero given one other linearized
//!    constraint (weak duality, so any multiplier yields a sound bound), and
//! 3. directed contraction of the box from each linearized constraint.
//!
//! SAT is only ever reported with a concrete witness point that passes an
//! exact rational (or arbitrarily tight enclosure) re-check of every
//! constraint, so a `Sat` verdict is unconditionally trustworthy; `Unsat`
//! follows only when every sub-box is refuted; everything else — including
//! budget exhaustion — degrades to `Unknown`.

use crate::ast::{Cond, Expr, ExprKey, ExprKind, RcExpr, Sym};
use crate::domain::InputDomain;
use crate::interval::{sqrt_rat, Interval};
use crate::rational::{Dir, Rat};
use crate::simulate::cond_holds_at;
use std::collections::{BTreeMap, HashMap};

/// Outcome of a satisfiability query.
#[derive(Clone, Debug)]
pub enum Verdict {
    /// Satisfiable, with a verified witness assignment.
    Sat(BTreeMap<Sym, Rat>),
    /// Proven unsatisfiable over the whole domain.
    Unsat,
    /// Could not decide within budget.
    Unknown,
}

impl Verdict {
    pub fn is_sat(&self) -> bool {
        matches!(self, Verdict::Sat(_))
    }
    pub fn is_unsat(&self) -> bool {
        matches!(self, Verdict::Unsat)
    }
    pub fn is_unknown(&self) -> bool {
        matches!(self, Verdict::Unknown)
    }
}

/// Decision procedure interface. `certify` asks whether the conjunction of
/// the domain's constraints and `query` has a solution inside the domain
/// box; `budget` caps the search effort (boxes explored, solver time, ...).
pub trait Certifier: Send + Sync {
    fn certify(&self, domain: &InputDomain, query: &[Cond], budget: u64) -> Verdict;

    /// Like [`Certifier::certify`], but also reports how much of `budget`
    /// the query actually consumed (search nodes for the built-in
    /// branch-and-bound). Callers issuing many queries use this to ration a
    /// shared effort pool, so hard near-threshold refutations stop early
    /// instead of paying the full budget on every bisection step. The
    /// default conservatively charges the whole budget; implementations
    /// with real accounting should override.
    fn certify_counted(
        &self,
        domain: &InputDomain,
        query: &[Cond],
        budget: u64,
    ) -> (Verdict, u64) {
        (self.certify(domain, query, budget), budget)
    }
}

/// Try certifiers in order; first decisive answer wins.
pub struct ChainCertifier(pub Vec<Box<dyn Certifier>>);

impl Certifier for ChainCertifier {
    fn certify(&self, domain: &InputDomain, query: &[Cond], budget: u64) -> Verdict {
        self.certify_counted(domain, query, budget).0
    }

    fn certify_counted(
        &self,
        domain: &InputDomain,
        query: &[Cond],
        budget: u64,
    ) -> (Verdict, u64) {
        let mut total = 0u64;
        for c in &self.0 {
            let (v, used) = c.certify_counted(domain, query, budget);
            total = total.saturating_add(used);
            match v {
                Verdict::Unknown => continue,
                decisive => return (decisive, total),
            }
        }
        (Verdict::Unknown, total)
    }
}

/// Branch-and-bound certifier; needs no external tooling.
#[derive(Default)]
pub struct BuiltinCertifier;

// Constraint in `g <= 0` / `g < 0` normal form.
struct Norm {
    g: RcExpr,
    strict: bool,
}

// Affine relaxation over the current box, coordinates in eps in [-1,1]^n:
// value in c0 + sum(lin[i] * eps_i) +/- res.
#[derive(Clone, Debug)]
struct Lin {
    c0: Rat,
    lin: Vec<Rat>,
    res: Rat,
}

impl Lin {
    fn constant(n: usize, v: Rat) -> Lin {
        Lin {
            c0: v,
            lin: vec![Rat::zero(); n],
            res: Rat::zero(),
        }
    }

    fn lin_sum(&self) -> Rat {
        self.lin
            .iter()
            .fold(Rat::zero(), |acc, l| &acc + &l.abs())
    }

    fn lower(&self) -> Rat {
        &(&self.c0 - &self.lin_sum()) - &self.res
    }

    fn upper(&self) -> Rat {
        &(&self.c0 + &self.lin_sum()) + &self.res
    }

    fn add(&self, o: &Lin) -> Lin {
        Lin {
            c0: &self.c0 + &o.c0,
            lin: self
                .lin
                .iter()
                .zip(&o.lin)
                .map(|(a, b)| a + b)
                .collect(),
            res: &self.res + &o.res,
        }
    }

    fn sub(&self, o: &Lin) -> Lin {
        Lin {
            c0: &self.c0 - &o.c0,
            lin: self
                .lin
                .iter()
                .zip(&o.lin)
                .map(|(a, b)| a - b)
                .collect(),
            res: &self.res + &o.res,
        }
    }

    // Apply the linear map alpha*x + zeta +/- theta (min-range results).
    fn linmap(&self, alpha: &Rat, zeta: &Rat, theta: &Rat) -> Lin {
        Lin {
            c0: &(alpha * &self.c0) + zeta,
            lin: self.lin.iter().map(|l| alpha * l).collect(),
            res: &(&alpha.abs() * &self.res) + theta,
        }
    }

    fn mul(&self, o: &Lin, same_node: bool) -> Lin {
        if same_node {
            return self.square_minrange();
        }
        let ra = &self.lin_sum() + &self.res;
        let rb = &o.lin_sum() + &o.res;
        Lin {
            c0: &self.c0 * &o.c0,
            lin: self
                .lin
                .iter()
                .zip(&o.lin)
                .map(|(a, b)| &(&self.c0 * b) + &(&o.c0 * a))
                .collect(),
            res: &(&(&self.c0.abs() * &o.res) + &(&o.c0.abs() * &self.res)) + &(&ra * &rb),
        }
    }

    // Min-range linearization of t^2 over this form's enclosure: the lower
    // bound never dips below zero and the endpoint values are exact, which
    // is what refutations of `x^2 < 0`-shaped constraints need.
    fn square_minrange(&self) -> Lin {
        let r = self.range();
        let (lo, hi) = (r.lo().clone(), r.hi().clone());
        let two = Rat::from_int(2);
        let (alpha, dmin, dmax) = if !lo.is_negative() {
            // slope alpha = 2*lo; t^2 - alpha*t is increasing on [lo, hi]
            let a = &two * &lo;
            (
                a.clone(),
                &lo.square() - &(&a * &lo),
                &hi.square() - &(&a * &hi),
            )
        } else if !hi.is_positive() {
            let a = &two * &hi;
            (
                a.clone(),
                &hi.square() - &(&a * &hi),
                &lo.square() - &(&a * &lo),
            )
        } else {
            // Straddles zero: best linear slope is 0, t^2 in [0, max^2].
            (Rat::zero(), Rat::zero(), r.max_abs().square())
        };
        let zeta = &(&dmax + &dmin) / &two;
        let theta = &(&dmax - &dmin) / &two;
        self.linmap(&alpha, &zeta, &theta)
    }

    // Enclosure of this form as a plain interval.
    fn range(&self) -> Interval {
        Interval::new(self.lower(), self.upper())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum EvalFail {
    DivByZero,
    NegSqrt,
}

type LinResult = Result<Lin, EvalFail>;

fn eval_lin(
    e: &RcExpr,
    vars: &[Sym],
    boxv: &[Interval],
    memo: &mut HashMap<ExprKey, LinResult>,
) -> LinResult {
    if let Some(hit) = memo.get(&ExprKey(e.clone())) {
        return hit.clone();
    }
    let n = vars.len();
    let out: LinResult = (|| {
        Ok(match &e.kind {
            ExprKind::Var(v) => {
                let i = vars
                    .iter()
                    .position(|w| w == v)
                    .expect("certifier query over unbound variable");
                let iv = &boxv[i];
                let mut lin = vec![Rat::zero(); n];
                lin[i] = &(iv.hi() - iv.lo()) / &Rat::from_int(2);
                Lin {
                    c0: iv.mid(),
                    lin,
                    res: Rat::zero(),
                }
            }
            ExprKind::Const(c) => Lin::constant(n, c.clone()),
            ExprKind::Add(a, b) => {
                eval_lin(a, vars, boxv, memo)?.add(&eval_lin(b, vars, boxv, memo)?)
            }
            ExprKind::Sub(a, b) => {
                eval_lin(a, vars, boxv, memo)?.sub(&eval_lin(b, vars, boxv, memo)?)
            }
            ExprKind::Mul(a, b) => {
                let la = eval_lin(a, vars, boxv, memo)?;
                let lb = eval_lin(b, vars, boxv, memo)?;
                la.mul(&lb, Expr::same(a, b))
            }
            ExprKind::Div(a, b) => {
                let la = eval_lin(a, vars, boxv, memo)?;
                let lb = eval_lin(b, vars, boxv, memo)?;
                let (alpha, zeta, theta) = minrange_inverse(&lb.range())?;
                la.mul(&lb.linmap(&alpha, &zeta, &theta), false)
            }
            ExprKind::Sqrt(a) => {
                let la = eval_lin(a, vars, boxv, memo)?;
                let (alpha, zeta, theta) = minrange_sqrt(&la.range())?;
                la.linmap(&alpha, &zeta, &theta)
            }
            ExprKind::Let { .. } | ExprKind::Call(..) => {
                panic!("certifier expects inlined arithmetic")
            }
        })
    })();
    memo.insert(ExprKey(e.clone()), out.clone());
    out
}

// Min-range linearization of 1/y on an interval excluding zero:
// 1/y in alpha*y + zeta +/- theta for all y in the interval.
fn minrange_inverse(iv: &Interval) -> Result<(Rat, Rat, Rat), EvalFail> {
    if iv.contains_zero() {
        return Err(EvalFail::DivByZero);
    }
    if iv.lo().is_positive() {
        let lo = iv.lo();
        let hi = iv.hi();
        // alpha = -1/hi^2; 1/y - alpha y is decreasing on [lo, hi].
        let alpha = -&(&Rat::one() / &hi.square());
        let dmax = &(&Rat::one() / lo) - &(&alpha * lo);
        let dmin = &(&Rat::one() / hi) - &(&alpha * hi);
        let two = Rat::from_int(2);
        Ok((
            alpha,
            &(&dmax + &dmin) / &two,
            &(&dmax - &dmin) / &two,
        ))
    } else {
        // Negative interval: 1/y = -(1/(-y)).
        let neg = iv.neg();
        let (alpha, zeta, theta) = minrange_inverse(&neg)?;
        Ok((alpha, -&zeta, theta))
    }
}

// Min-range linearization of sqrt(y) on a nonnegative interval.
fn minrange_sqrt(iv: &Interval) -> Result<(Rat, Rat, Rat), EvalFail> {
    if iv.lo().is_negative() {
        return Err(EvalFail::NegSqrt);
    }
    let slo = sqrt_rat(iv.lo(), Dir::Down);
    let shi = sqrt_rat(iv.hi(), Dir::Up);
    if iv.hi().is_zero() {
        return Ok((Rat::zero(), Rat::zero(), Rat::zero()));
    }
    // alpha <= 1/(2 sqrt(hi)) keeps sqrt(y) - alpha y nondecreasing.
    let alpha = &Rat::one() / &(&shi + &shi);
    let dmax = &shi - &(&alpha * iv.hi());
    let dmin = &slo - &(&alpha * iv.lo());
    // dmin <= dmax by construction; guard against rounding of slo/shi.
    let (dmin, dmax) = if dmin <= dmax { (dmin, dmax) } else { (dmax, dmin) };
    let two = Rat::from_int(2);
    Ok((
        alpha,
        &(&dmax + &dmin) / &two,
        &(&dmax - &dmin) / &two,
    ))
}

// Sound upper bound on max c.eps subject to a.eps <= beta, eps in [-1,1]^n,
// by weak duality: for any lambda >= 0 the value is at most
// sum_i |c_i - lambda a_i| + lambda beta. Evaluated at lambda = 0 and at
// each positive breakpoint c_i/a_i. Breakpoints are rounded to short
// dyadics: lambda is a free dual parameter, so any value is sound, and the
// exact quotients would spread long rationals through every term of f.
fn dual_max(c: &[Rat], a: &[Rat], beta: &Rat) -> Rat {
    let f = |lambda: &Rat| -> Rat {
        let mut s = lambda * beta;
        for (ci, ai) in c.iter().zip(a) {
            s = &s + &(ci - &(lambda * ai)).abs();
        }
        s
    };
    let mut best = f(&Rat::zero());
    for (ci, ai) in c.iter().zip(a) {
        if !ai.is_zero() {
            let lambda = (ci / ai).round_dyadic(64, Dir::Down);
            if lambda.is_positive() {
                let v = f(&lambda);
                if v < best {
                    best = v;
                }
            }
        }
    }
    best
}

impl Certifier for BuiltinCertifier {
    fn certify(&self, domain: &InputDomain, query: &[Cond], budget: u64) -> Verdict {
        self.certify_counted(domain, query, budget).0
    }

    fn certify_counted(
        &self,
        domain: &InputDomain,
        query: &[Cond],
        budget: u64,
    ) -> (Verdict, u64) {
        let vars: Vec<Sym> = domain.vars.clone();
        let n = vars.len();

        // Normalize all constraints to g <= 0 / g < 0 with lets inlined.
        let mut norms: Vec<Norm> = Vec::new();
        for c in domain.constraints.iter().chain(query) {
            let (g, strict) = c.as_le_zero();
            let g = g.inline_lets();
            for v in g.free_vars() {
                if !vars.contains(&v) {
                    // Constraint over a variable outside the box: cannot
                    // evaluate it soundly.
                    return (Verdict::Unknown, 0);
                }
            }
            norms.push(Norm { g, strict });
        }

        let root: Vec<Interval> = vars.iter().map(|v| domain.boxes[v].clone()).collect();
        if norms.is_empty() {
            let witness = vars
                .iter()
                .zip(&root)
                .map(|(v, iv)| (v.clone(), iv.mid()))
                .collect();
            return (Verdict::Sat(witness), 0);
        }

        let root_width: Vec<Rat> = root.iter().map(|iv| iv.width()).collect();
        let mut stack: Vec<(Vec<Interval>, u32)> = vec![(root, 0)];
        let mut nodes: u64 = 0;
        let mut abandoned = false;
        let width_floor = Rat::pow2(-70);
        // Refutation cascades along thin feasible bands can visit thousands
        // of boxes; the full witness-probe repertoire is worth its cost only
        // while the search is young and boxes are coarse. Satisfiable
        // queries are almost always decided within the first few dozen
        // boxes; past these limits only the cheap center probe runs.
        const FULL_PROBE_DEPTH: u32 = 8;
        const FULL_PROBE_NODES: u64 = 64;

        'boxes: while let Some((mut boxv, depth)) = stack.pop() {
            nodes += 1;
            if nodes > budget {
                return (Verdict::Unknown, nodes);
            }

            // Two rounds of evaluate / refute / contract.
            let mut lins: Vec<Option<Lin>> = Vec::new();
            for round in 0..2 {
                let mut memo: HashMap<ExprKey, LinResult> = HashMap::new();
                lins = norms
                    .iter()
                    .map(|nm| eval_lin(&nm.g, &vars, &boxv, &mut memo).ok())
                    .collect();

                let sums: Vec<Option<Rat>> = lins
                    .iter()
                    .map(|l| l.as_ref().map(Lin::lin_sum))
                    .collect();

                // Refutation: every constraint must admit g <= 0.
                for (k, lk) in lins.iter().enumerate() {
                    let Some(lk) = lk else { continue };
                    // Base lower bound from its own enclosure.
                    let mut max_neg_dir = sums[k].clone().unwrap();
                    // The dual can push max_neg_dir no lower than
                    // -lin_sum, so when even that cannot make the lower
                    // bound positive the (comparatively costly) dual
                    // improvement is pointless.
                    let refutable = (&(&lk.c0 - &lk.res) + &max_neg_dir).is_positive();
                    if refutable && !max_neg_dir.is_zero() {
                        // Improve with each other linearized constraint.
                        let c_neg: Vec<Rat> = lk.lin.iter().map(|x| -x).collect();
                        for (j, lj) in lins.iter().enumerate() {
                            if j == k {
                                continue;
                            }
                            let Some(lj) = lj else { continue };
                            let beta = &lj.res - &lj.c0;
                            let bound = dual_max(&c_neg, &lj.lin, &beta);
                            if bound < max_neg_dir {
                                max_neg_dir = bound;
                            }
                        }
                    }
                    let lb = &(&lk.c0 - &lk.res) - &max_neg_dir;
                    let refuted = if norms[k].strict {
                        !lb.is_negative()
                    } else {
                        lb.is_positive()
                    };
                    if refuted {
                        continue 'boxes;
                    }
                }

                if round == 1 {
                    break;
                }

                // Contraction: tighten eps bounds from each linearization.
                let mut eps_lo = vec![-Rat::one(); n];
                let mut eps_hi = vec![Rat::one(); n];
                for (k, lk) in lins.iter().enumerate() {
                    let Some(lk) = lk else { continue };
                    let sk = sums[k].as_ref().unwrap();
                    for i in 0..n {
                        let ai = &lk.lin[i];
                        if ai.is_zero() {
                            continue;
                        }
                        // a_i eps_i <= -c0 + res + sum_{j!=i} |a_j|
                        let others = sk - &ai.abs();
                        let rhs = &(&others + &lk.res) - &lk.c0;
                        let bound = &rhs / ai;
                        if ai.is_positive() {
                            if bound < eps_hi[i] {
                                eps_hi[i] = bound;
                            }
                        } else if bound > eps_lo[i] {
                            eps_lo[i] = bound;
                        }
                    }
                }
                // Re-linearizing (round 2) pays off only when contraction
                // substantially changed the box; track whether any axis at
                // least halved.
                let mut strong = false;
                for i in 0..n {
                    if eps_lo[i] > eps_hi[i] {
                        continue 'boxes; // no feasible point in this box
                    }
                    if eps_lo[i] > -Rat::one() || eps_hi[i] < Rat::one() {
                        let mid = boxv[i].mid();
                        let half = &(boxv[i].hi() - boxv[i].lo()) / &Rat::from_int(2);
                        // Outward dyadic rounding: the exact contracted
                        // endpoints are quotients of linearization
                        // coefficients, and feeding those back into the next
                        // round compounds rational bit-length geometrically.
                        let lo = (&mid + &(&half * &eps_lo[i])).round_dyadic(128, Dir::Down);
                        let hi = (&mid + &(&half * &eps_hi[i])).round_dyadic(128, Dir::Up);
                        boxv[i] = Interval::new(lo, hi);
                        if &eps_hi[i] - &eps_lo[i] < Rat::one() {
                            strong = true;
                        }
                    }
                }
                if !strong {
                    break;
                }
            }

            // Witness probes: box center and corners, a bracketed line
            // search toward the boundary of the first violated constraint,
            // and each constraint's minimizing vertex. Every candidate is
            // re-checked exactly, so probing is pure heuristics with no
            // soundness cost.
            let halfw: Vec<Rat> = boxv
                .iter()
                .map(|iv| &(iv.hi() - iv.lo()) / &Rat::from_int(2))
                .collect();
            let mids: Vec<Rat> = boxv.iter().map(|iv| iv.mid()).collect();
            let clamp1 = |v: Rat| -> Rat {
                if v > Rat::one() {
                    Rat::one()
                } else if v < -Rat::one() {
                    -Rat::one()
                } else {
                    v
                }
            };
            let to_point = |eps: &[Rat]| -> BTreeMap<Sym, Rat> {
                vars.iter()
                    .enumerate()
                    .map(|(i, v)| (v.clone(), &mids[i] + &(&halfw[i] * &eps[i])))
                    .collect()
            };
            let mid_point = to_point(&vec![Rat::zero(); n]);
            if verify_witness(&norms, &mid_point) {
                return (Verdict::Sat(mid_point), nodes);
            }
            if depth > FULL_PROBE_DEPTH || nodes > FULL_PROBE_NODES {
                // Deep or late boxes get the cheap center probe only:
                // anything a witness search would find down here is also
                // reachable by further splitting, and refutation sweeps
                // dominate past the first few dozen boxes.
                split_box(&mut stack, boxv, depth, &root_width, &width_floor, &mut abandoned);
                continue;
            }
            // Corners: witnesses on the domain boundary can sit where the
            // linearized gradient vanishes (e.g. x^2 <= 0 at x = 0) and
            // would be invisible to gradient-guided probes.
            let mut corners: Vec<Vec<Rat>> =
                vec![vec![-Rat::one(); n], vec![Rat::one(); n]];
            if n >= 2 {
                corners.push(
                    (0..n)
                        .map(|i| if i % 2 == 0 { -Rat::one() } else { Rat::one() })
                        .collect(),
                );
                corners.push(
                    (0..n)
                        .map(|i| if i % 2 == 0 { Rat::one() } else { -Rat::one() })
                        .collect(),
                );
            }
            for eps in &corners {
                let p = to_point(eps);
                if verify_witness(&norms, &p) {
                    return (Verdict::Sat(p), nodes);
                }
            }
            // Line search: descend from the center along the gradient of the
            // first constraint violated there, bracketing its zero crossing
            // by doubling and then bisecting. Thin feasible shells (two-sided
            // enclosures of one expression) are found this way: the bisection
            // homes in on the boundary and lands inside the shell.
            for (k, lk) in lins.iter().enumerate() {
                let Some(lk) = lk else { continue };
                let l2 = lk
                    .lin
                    .iter()
                    .fold(Rat::zero(), |a, x| &a + &x.square());
                if l2.is_zero() {
                    continue;
                }
                let g_mid = match crate::simulate::point_enclosure(&norms[k].g, &mid_point) {
                    Ok(enc) => enc.hi_rat(),
                    Err(_) => continue,
                };
                if !g_mid.is_positive() {
                    continue; // center already satisfies this constraint
                }
                // eps(s) = clamp(-s * (g_mid/l2) * lin); s = 1 is the Newton
                // step of the linear model.
                // Probe coordinates are rounded toward zero to a short
                // mantissa: any point of the box is a legal probe, and exact
                // Newton quotients would drag huge rationals into every
                // enclosure evaluation below.
                let shorten = |v: Rat| -> Rat {
                    let d = if v.is_negative() { Dir::Up } else { Dir::Down };
                    v.round_dyadic(64, d)
                };
                let eps_of = |s: &Rat| -> Vec<Rat> {
                    let scale = &(s * &g_mid) / &l2;
                    lk.lin
                        .iter()
                        .map(|l| shorten(clamp1(-&(&scale * l))))
                        .collect()
                };
                let g_at = |p: &BTreeMap<Sym, Rat>| -> Option<Rat> {
                    crate::simulate::point_enclosure(&norms[k].g, p)
                        .ok()
                        .map(|enc| enc.hi_rat())
                };
                let mut s_lo = Rat::zero();
                let mut s_hi: Option<Rat> = None;
                let mut s = Rat::one();
                for _ in 0..6 {
                    let p = to_point(&eps_of(&s));
                    if verify_witness(&norms, &p) {
                        return (Verdict::Sat(p), nodes);
                    }
                    match g_at(&p) {
                        Some(v) if !v.is_positive() => {
                            s_hi = Some(s);
                            break;
                        }
                        Some(_) => {
                            s_lo = s.clone();
                            s = &s * &Rat::from_int(2);
                        }
                        None => break,
                    }
                }
                if let Some(mut hi) = s_hi {
                    for _ in 0..30 {
                        let mid = &(&s_lo + &hi) / &Rat::from_int(2);
                        let p = to_point(&eps_of(&mid));
                        if verify_witness(&norms, &p) {
                            return (Verdict::Sat(p), nodes);
                        }
                        match g_at(&p) {
                            Some(v) if v.is_positive() => s_lo = mid,
                            Some(_) => hi = mid,
                            None => break,
                        }
                    }
                }
                break;
            }
            // Minimizing vertex of each constraint (catches witnesses on the
            // box boundary, e.g. equalities attained at an endpoint).
            for lk in lins.iter().take(4) {
                let Some(lk) = lk else { continue };
                let eps: Vec<Rat> = lk
                    .lin
                    .iter()
                    .map(|l| {
                        if l.is_positive() {
                            -Rat::one()
                        } else if l.is_negative() {
                            Rat::one()
                        } else {
                            Rat::zero()
                        }
                    })
                    .collect();
                let p = to_point(&eps);
                if verify_witness(&norms, &p) {
                    return (Verdict::Sat(p), nodes);
                }
            }

            split_box(&mut stack, boxv, depth, &root_width, &width_floor, &mut abandoned);
        }

        let verdict = if abandoned {
            Verdict::Unknown
        } else {
            Verdict::Unsat
        };
        (verdict, nodes)
    }
}

// Split a surviving box on its largest relative edge and push both halves,
// or flag the region as abandoned when every edge is below the width floor.
fn split_box(
    stack: &mut Vec<(Vec<Interval>, u32)>,
    boxv: Vec<Interval>,
    depth: u32,
    root_width: &[Rat],
    width_floor: &Rat,
    abandoned: &mut bool,
) {
    let n = boxv.len();
    let mut best = 0usize;
    let mut best_rel = Rat::zero();
    for i in 0..n {
        let w = boxv[i].width();
        if w.is_zero() {
            continue;
        }
        let rel = if root_width[i].is_zero() {
            w.clone()
        } else {
            &w / &root_width[i]
        };
        if rel > best_rel {
            best_rel = rel;
            best = i;
        }
    }
    if best_rel <= *width_floor {
        // Too small to keep splitting; give up on this region.
        *abandoned = true;
        return;
    }
    let mid = boxv[best].mid();
    let mut left = boxv.clone();
    let mut right = boxv;
    left[best] = Interval::new(left[best].lo().clone(), mid.clone());
    right[best] = Interval::new(mid, right[best].hi().clone());
    stack.push((right, depth + 1));
    stack.push((left, depth + 1));
}

/// Exact (enclosure-backed) verification that a point satisfies every
/// normalized constraint. Conservative: `true` is trustworthy.
fn verify_witness(norms: &[Norm], point: &BTreeMap<Sym, Rat>) -> bool {
    use crate::ast::RelOp;
    norms.iter().all(|nm| {
        let op = if nm.strict { RelOp::Lt } else { RelOp::Le };
        let cond = Cond::new(nm.g.clone(), op, Expr::konst(Rat::zero()));
        cond_holds_at(&cond, point) == Some(true)
    })
}

/// Convenience wrapper: is the domain (its own constraints only) feasible?
pub fn check_feasible(cert: &dyn Certifier, domain: &InputDomain, budget: u64) -> Verdict {
    cert.certify(domain, &[], budget)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::RelOp;
    use crate::parser::parse_expr;
    use std::sync::Arc;

    fn sym(s: &str) -> Sym {
        Arc::from(s)
    }

    fn dom2(xr: (i64, i64), yr: (i64, i64), constraints: Vec<Cond>) -> InputDomain {
        let mut boxes = BTreeMap::new();
        boxes.insert(sym("x"), Interval::from_ints(xr.0, xr.1));
        boxes.insert(sym("y"), Interval::from_ints(yr.0, yr.1));
        InputDomain::new(vec![sym("x"), sym("y")], boxes, constraints)
    }

    fn lt(l: &str, r: &str) -> Cond {
        Cond::new(
            parse_expr(l).unwrap(),
            RelOp::Lt,
            parse_expr(r).unwrap(),
        )
    }

    fn le(l: &str, r: &str) -> Cond {
        Cond::new(
            parse_expr(l).unwrap(),
            RelOp::Le,
            parse_expr(r).unwrap(),
        )
    }

    const BUDGET: u64 = 20_000;

    #[test]
    fn sat_with_verified_witness() {
        let cert = BuiltinCertifier;
        let d = dom2((0, 4), (0, 4), vec![lt("x", "y")]);
        match cert.certify(&d, &[lt("x * y", "2.0")], BUDGET) {
            Verdict::Sat(w) => {
                assert!(w[&sym("x")] < w[&sym("y")]);
                let prod = &w[&sym("x")] * &w[&sym("y")];
                assert!(prod < "2".parse().unwrap());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unsat_nonlinear() {
        let cert = BuiltinCertifier;
        // x^2 + y^2 < -1 impossible
        let d = dom2((-3, 3), (-3, 3), vec![]);
        let q = [lt("x*x + y*y", "-1.0")];
        assert!(cert.certify(&d, &q, BUDGET).is_unsat());
    }

    #[test]
    fn unsat_via_constraint_interaction() {
        let cert = BuiltinCertifier;
        // under x < y, the value y - x is positive: y - x < 0 must be UNSAT.
        let d = dom2((-9, 9), (-9, 9), vec![lt("x", "y")]);
        let q = [lt("y - x", "0.0")];
        assert!(cert.certify(&d, &q, BUDGET).is_unsat());
    }

    #[test]
    fn square_lower_bound_refutation() {
        let cert = BuiltinCertifier;
        // x*x is at least 0: strictly below -0.001 is impossible; the square
        // rule refutes without deep splitting.
        let d = dom2((-8, 8), (0, 1), vec![]);
        let q = [lt("x * x", "-0.001")];
        assert!(cert.certify(&d, &q, BUDGET).is_unsat());
    }

    #[test]
    fn thin_feasible_shell_found_sat() {
        let cert = BuiltinCertifier;
        // ring: 3.9999 <= x^2 + y^2 <= 4.0001 is satisfiable (circle r=2)
        let d = dom2((-3, 3), (-3, 3), vec![]);
        let q = [
            le("3.9999", "x*x + y*y"),
            le("x*x + y*y", "4.0001"),
        ];
        match cert.certify(&d, &q, 200_000) {
            Verdict::Sat(w) => {
                let v = &w[&sym("x")].square() + &w[&sym("y")].square();
                assert!(v >= "3.9999".parse().unwrap() && v <= "4.0001".parse().unwrap());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn budget_exhaustion_is_unknown() {
        let cert = BuiltinCertifier;
        // A measure-zero boundary query the solver cannot decide cheaply:
        // x*x + y*y = 2 exactly (two-sided) with tiny budget.
        let d = dom2((-3, 3), (-3, 3), vec![]);
        let q = [le("x*x + y*y", "2.0"), le("2.0", "x*x + y*y"), lt("x", "0.0"), lt("0.0", "y")];
        let v = cert.certify(&d, &q, 3);
        assert!(v.is_unknown() || v.is_sat());
    }

    #[test]
    fn division_over_zero_box_splits_through() {
        let cert = BuiltinCertifier;
        // 1/x > 10 over x in [-1, 1] \ {0}: satisfiable near x = 0+.
        let mut boxes = BTreeMap::new();
        boxes.insert(sym("x"), Interval::from_ints(-1, 1));
        let d = InputDomain::new(vec![sym("x")], boxes, vec![]);
        let q = [Cond::new(
            parse_expr("1.0 / x").unwrap(),
            RelOp::Gt,
            parse_expr("10.0").unwrap(),
        )];
        match cert.certify(&d, &q, 50_000) {
            Verdict::Sat(w) => {
                let x = &w[&sym("x")];
                assert!(x.is_positive() && (&Rat::one() / x) > "10".parse().unwrap());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn division_unsat_when_bounded_away() {
        let cert = BuiltinCertifier;
        // x in [1, 2]: 1/x in [1/2, 1]; 1/x > 1.5 impossible.
        let mut boxes = BTreeMap::new();
        boxes.insert(sym("x"), Interval::from_ints(1, 2));
        let d = InputDomain::new(vec![sym("x")], boxes, vec![]);
        let q = [Cond::new(
            parse_expr("1.0 / x").unwrap(),
            RelOp::Gt,
            parse_expr("1.5").unwrap(),
        )];
        assert!(cert.certify(&d, &q, BUDGET).is_unsat());
    }

    #[test]
    fn sqrt_constraints() {
        let cert = BuiltinCertifier;
        let mut boxes = BTreeMap::new();
        boxes.insert(sym("x"), Interval::from_ints(0, 4));
        let d = InputDomain::new(vec![sym("x")], boxes, vec![]);
        // sqrt(x) > 2.1 impossible on [0,4]
        let q = [Cond::new(
            parse_expr("sqrt(x)").unwrap(),
            RelOp::Gt,
            parse_expr("2.1").unwrap(),
        )];
        assert!(cert.certify(&d, &q, BUDGET).is_unsat());
        // sqrt(x) > 1.9 satisfiable
        let q = [Cond::new(
            parse_expr("sqrt(x)").unwrap(),
            RelOp::Gt,
            parse_expr("1.9").unwrap(),
        )];
        assert!(cert.certify(&d, &q, BUDGET).is_sat());
    }

    #[test]
    fn strictness_matters_on_boundary() {
        let cert = BuiltinCertifier;
        let mut boxes = BTreeMap::new();
        boxes.insert(sym("x"), Interval::from_ints(0, 1));
        let d = InputDomain::new(vec![sym("x")], boxes, vec![]);
        // x*x <= 0 is satisfiable exactly at x = 0...
        let q = [le("x * x", "0.0")];
        match cert.certify(&d, &q, 100_000) {
            Verdict::Sat(w) => assert!(w[&sym("x")].is_zero()),
            // boundary-only solution may also exhaust into Unknown; both are
            // sound, but we expect the midpoint probes to find 0 quickly
            other => panic!("{other:?}"),
        }
        // ...but x*x < 0 strictly is unsatisfiable.
        let q = [lt("x * x", "0.0")];
        let v = cert.certify(&d, &q, 100_000);
        assert!(v.is_unsat(), "{v:?}");
    }

    #[test]
    fn empty_query_feasibility() {
        let cert = BuiltinCertifier;
        let d = dom2((0, 1), (0, 1), vec![lt("x + y", "-1.0")]);
        assert!(check_feasible(&cert, &d, BUDGET).is_unsat());
        let d = dom2((0, 1), (0, 1), vec![lt("x + y", "1.0")]);
        assert!(check_feasible(&cert, &d, BUDGET).is_sat());
    }

    #[test]
    fn chain_prefers_first_decisive() {
        struct AlwaysUnknown;
        impl Certifier for AlwaysUnknown {
            fn certify(&self, _: &InputDomain, _: &[Cond], _: u64) -> Verdict {
                Verdict::Unknown
            }
        }
        let chain = ChainCertifier(vec![
            Box::new(AlwaysUnknown),
            Box::new(BuiltinCertifier),
        ]);
        let d = dom2((0, 1), (0, 1), vec![]);
        assert!(chain.certify(&d, &[lt("x + y", "-1.0")], BUDGET).is_unsat());
    }
}
