// Negated float comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bptt;
pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod eval;
pub mod grad_oracle;
pub mod loss;
pub mod lstm;
pub mod synthetic;
pub mod text;

pub use error::{Error, Result};
