//! Stochastic training of the ratio model against the current rate matrices.

use alloc::format;

use rand::Rng;

use super::{score_grad, Adam, RatioTarget, ScoreBatch, ScoreModel};
use crate::{Error, FactorizedRateMatrix, NoiseSchedule, Result, StateBatch};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreLoopConfig {
    pub max_step: usize,
    pub eps_score: f64,
    pub batch_size: usize,
    pub eps_t: f64,
    /// Decay of the exponential moving average used for stopping decisions.
    pub ema_decay: f64,
    /// Abort once the smoothed loss exceeds this multiple of the initial loss.
    pub divergence_factor: f64,
    /// Steps averaged into the initial loss; divergence is not checked before.
    pub warmup: usize,
}

impl Default for ScoreLoopConfig {
    fn default() -> Self {
        Self {
            max_step: 2000,
            eps_score: 1e-4,
            batch_size: 64,
            eps_t: 1e-3,
            ema_decay: 0.99,
            divergence_factor: 10.0,
            warmup: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreLoopReport {
    pub updates: usize,
    pub initial_loss: f64,
    pub smoothed_loss: f64,
    pub last_loss: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn score_learning_loop<R: Rng + ?Sized>(
    model: &mut ScoreModel,
    optimizer: &mut Adam,
    data: &StateBatch,
    rates: &[FactorizedRateMatrix],
    schedule: &NoiseSchedule,
    target: RatioTarget<'_>,
    cfg: &ScoreLoopConfig,
    rng: &mut R,
) -> Result<ScoreLoopReport> {
    if cfg.max_step == 0 || cfg.batch_size == 0 {
        return Err(Error::domain("score loop needs max_step >= 1 and batch_size >= 1"));
    }
    if !(cfg.eps_score > 0.0 && (0.0..1.0).contains(&cfg.ema_decay)) {
        return Err(Error::domain("invalid score loop tolerances"));
    }
    if data.is_empty() {
        return Err(Error::Empty("score training data"));
    }
    let mut ema = 0.0;
    let mut weight = 0.0;
    let mut warm_sum = 0.0;
    let mut report = ScoreLoopReport {
        updates: 0,
        initial_loss: f64::NAN,
        smoothed_loss: f64::NAN,
        last_loss: f64::NAN,
    };
    let warmup = cfg.warmup.max(1);
    for step in 0..cfg.max_step {
        let batch = ScoreBatch::sample(data, rates, schedule, cfg.batch_size, cfg.eps_t, rng)?;
        let (loss, grad) = score_grad(model, &batch, rates, schedule, target)?;
        optimizer.step(model.params_mut(), &grad)?;
        report.updates += 1;
        report.last_loss = loss;
        ema = cfg.ema_decay * ema + (1.0 - cfg.ema_decay) * loss;
        weight = cfg.ema_decay * weight + (1.0 - cfg.ema_decay);
        report.smoothed_loss = ema / weight;
        if step < warmup {
            warm_sum += loss;
            report.initial_loss = warm_sum / (step + 1) as f64;
        } else if report.smoothed_loss > cfg.divergence_factor * report.initial_loss {
            return Err(Error::Diverged(format!(
                "smoothed score loss {:.6e} exceeds {}x the initial {:.6e} after {} steps",
                report.smoothed_loss, cfg.divergence_factor, report.initial_loss, report.updates
            )));
        }
        if report.smoothed_loss < cfg.eps_score {
            break;
        }
    }
    Ok(report)
}
