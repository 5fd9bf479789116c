//! Constraint-aware Bayesian optimization over discrete processor parameter spaces.

// NaN must fail every validity check, so negated comparisons are deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acquisition;
pub mod assets;
pub mod checkpoint;
pub mod constraints;
pub mod driver;
pub mod error;
pub mod eval;
pub mod gp;
pub mod par;
pub mod space;
pub mod warm_start;

pub use error::{Error, Result};
