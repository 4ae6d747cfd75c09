// NaN-rejecting checks are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod physics;
pub mod plant;
pub mod control;
pub mod sensing;
pub mod estimator;
pub mod harness;

pub use error::{Error, Result};
