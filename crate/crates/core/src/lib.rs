//! Residual cardinality correction for query-plan operators.
//!
//! The crate ingests plan traces with native optimizer estimates and actual
//! row counts, learns a per-operator correction on top of the native estimate,
//! applies it under a safety policy, and scores everything with Q-error.

// Validation uses `!(a < b)` forms on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifact;
pub mod baselines;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod explain;
pub mod learners;
pub mod pipeline;
pub mod policy;
pub mod quantile;
pub mod synthgen;
pub mod targets;
pub mod trace;

pub use error::{Error, Result};
