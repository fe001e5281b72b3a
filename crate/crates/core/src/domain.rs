//! Input domains: per-variable boxes plus residual constraints.

use crate::ast::{Cond, Sym};
use crate::interval::Interval;
use crate::rational::Rat;
use std::collections::BTreeMap;

/// The set of admissible inputs: a box (one interval per variable, in a
/// fixed variable order) intersected with arbitrary comparison constraints.
#[derive(Clone, Debug)]
pub struct InputDomain {
    /// Variable order; fixes witness/vector layouts downstream.
    pub vars: Vec<Sym>,
    pub boxes: BTreeMap<Sym, Interval>,
    pub constraints: Vec<Cond>,
}

impl InputDomain {
    pub fn new(vars: Vec<Sym>, boxes: BTreeMap<Sym, Interval>, constraints: Vec<Cond>) -> Self {
        debug_assert!(vars.iter().all(|v| boxes.contains_key(v)));
        InputDomain {
            vars,
            boxes,
            constraints,
        }
    }

    pub fn interval(&self, v: &Sym) -> &Interval {
        &self.boxes[v]
    }

    /// Widen every variable's box symmetrically by `by[v]` (absent = 0).
    /// Models running the real-valued analysis over finite-precision inputs.
    pub fn inflate(&self, by: &BTreeMap<Sym, Rat>) -> InputDomain {
        let mut boxes = self.boxes.clone();
        for (v, amount) in by {
            if let Some(iv) = boxes.get_mut(v) {
                *iv = iv.inflate(amount);
            }
        }
        InputDomain {
            vars: self.vars.clone(),
            boxes,
            constraints: self.constraints.clone(),
        }
    }

    pub fn with_constraints(&self, extra: impl IntoIterator<Item = Cond>) -> InputDomain {
        let mut constraints = self.constraints.clone();
        constraints.extend(extra);
        InputDomain {
            vars: self.vars.clone(),
            boxes: self.boxes.clone(),
            constraints,
        }
    }

    /// Point membership in the box part (constraints not checked here).
    pub fn box_contains(&self, point: &BTreeMap<Sym, Rat>) -> bool {
        self.vars.iter().all(|v| {
            point
                .get(v)
                .map(|x| self.boxes[v].contains(x))
                .unwrap_or(false)
        })
    }
}
