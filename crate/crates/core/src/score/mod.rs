//! Backward stage: ratio models and the score-entropy objective.

mod loss;
mod model;
mod optim;
mod train;

pub use loss::{
    exact_score_oracle, sample_xt_given_x0, score_entropy_loss, score_entropy_terms, score_grad, score_output_grad,
    ExactScoreOracle, RatioTarget, ScoreBatch,
};
pub use model::{ScoreModel, ForwardCache, TIME_EMBEDDING_WIDTH};
pub use optim::{Adam, AdamConfig};
pub use train::{score_learning_loop, ScoreLoopConfig, ScoreLoopReport};

use alloc::vec::Vec;

use crate::Result;

/// Anything that produces the `d x n` ratio estimates `s(x_t, t)_y`.
///
/// Output is dimension-major: entry `dim * n + y`.
pub trait RatioSource {
    fn ratios(&self, xt: &[usize], t: f64) -> Result<Vec<f64>>;
}
