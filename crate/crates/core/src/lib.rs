#![no_std]
#![forbid(unsafe_code)]
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Discrete Markov bridge numerics.
//!
//! Everything here is allocation-backed but IO-free, so the crate builds
//! without `std`. The modules follow the life cycle of a bridge:
//!
//! - [`rate`]: factorized rate matrices `Q = A H A^-1` and their closed-form
//!   exponentials.
//! - [`bridge`]: the constructive solver mapping one categorical onto another,
//!   plus histogram-based permutation estimation.
//! - [`matrix_learning`]: the forward KL objective and its projected descent.
//! - [`score`]: the ratio network, score-entropy loss and its optimizer.
//! - [`sampler`]: reverse-time Euler generation and `p_0` estimation.
//! - [`evaluation`]: factorized KL terms and ELBO reports.
//! - [`trainer`]: the alternating outer loop tying the stages together.
//!
//! Conventions: distributions are row vectors, `p_t = p_0 exp(beta(t) Q)`,
//! and `beta` (not `t`) is the time coordinate inside linear algebra.

extern crate alloc;

pub mod bridge;
pub mod error;
pub mod evaluation;
pub mod linalg;
pub mod matrix_learning;
pub mod prob;
pub mod rate;
pub mod sampler;
pub mod schedule;
pub mod score;
pub mod states;
pub mod trainer;

pub use crate::error::{Error, Result};
pub use crate::prob::{ProbVector, ProductDistribution};
pub use crate::rate::FactorizedRateMatrix;
pub use crate::schedule::NoiseSchedule;
pub use crate::states::StateBatch;

/// Floor applied to probabilities before they are divided by or logged.
pub const PROB_FLOOR: f64 = 1e-12;
