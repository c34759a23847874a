//! Contextual safe Bayesian optimization with global exploration.
// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acquisition;
pub mod baselines;
pub mod config;
pub mod env;
pub mod error;
pub mod exploration;
pub mod gp;
pub mod harness;
pub mod metrics;
pub mod presets;
pub mod safe_sets;

pub use error::{Error, Result};
