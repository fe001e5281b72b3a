//! Sound analysis and compilation of real-valued arithmetic into finite
//! precision.
//!
//! This crate bounds the worst-case absolute difference between a program's
//! ideal real-number semantics and its finite-precision execution — over all
//! inputs in declared ranges, under declared input uncertainties — and picks
//! the cheapest machine arithmetic meeting a target error bound. All
//! analysis arithmetic is exact (rationals and directed dyadics); results
//! are sound upper bounds, never estimates.

pub mod affine;
pub mod ast;
pub mod certify;
pub mod discontinuity;
pub mod domain;
pub mod dyadic;
pub mod error_analysis;
pub mod frontend;
pub mod interval;
pub mod loop_analysis;
pub mod matrix;
pub mod parser;
pub mod precision;
pub mod range;
pub mod rational;
pub mod simulate;
pub mod symdiff;

pub use ast::{Cond, Expr, ExprKind, Pred, RcExpr, RelOp, Sym};
pub use certify::{Certifier, ChainCertifier, Verdict};
pub use domain::InputDomain;
pub use error_analysis::{AnalysisError, Diagnostic, DiagnosticKind, ErrorReport, NodeLayout};
pub use frontend::{Body, FunctionDef, Path, Program};
pub use interval::Interval;
pub use precision::{FixedFormat, FixedRounding, Precision};
pub use range::{RangeConfig, RangeEngine, RangeError};
pub use rational::{Dir, Rat};
