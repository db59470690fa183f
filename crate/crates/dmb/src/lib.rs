//! File formats, datasets and the command-line driver around `dmb-core`.
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod oracle;
pub mod run;
pub mod selftest;

pub use crate::error::{DmbError, Result};
