//! Likelihood bounds: the factorized terminal KL and the full ELBO report.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::prob::kl_divergence;
use crate::score::{score_entropy_terms, RatioSource, RatioTarget, ScoreBatch};
use crate::{Error, FactorizedRateMatrix, NoiseSchedule, ProductDistribution, Result, StateBatch};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboReport {
    /// Score-entropy part, nats per sequence.
    pub j_score: f64,
    /// Terminal KL part, nats per sequence.
    pub kl_term: f64,
    pub total_nats: f64,
    pub bits_per_dim: f64,
    /// Standard error of `j_score`.
    pub mc_std_error: f64,
}

impl ElboReport {
    pub fn new(j_score: f64, kl_term: f64, mc_std_error: f64, dims: usize) -> Result<Self> {
        let total_nats = j_score + kl_term;
        let report = Self {
            j_score,
            kl_term,
            total_nats,
            bits_per_dim: total_nats / (dims as f64 * core::f64::consts::LN_2),
            mc_std_error,
        };
        let fields = [j_score, kl_term, total_nats, report.bits_per_dim, mc_std_error];
        if dims == 0 || fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "ELBO report".into(),
            });
        }
        Ok(report)
    }
}

fn check(rates: &[FactorizedRateMatrix], terminal: &ProductDistribution) -> Result<()> {
    if rates.is_empty() {
        return Err(Error::Empty("rate matrices"));
    }
    if terminal.dims() != rates.len() || rates.iter().any(|q| q.n() != terminal.states()) {
        return Err(Error::shape("terminal distribution and rates disagree"));
    }
    Ok(())
}

/// `sum_i KL(exp(beta(T) Q_i)[x_0^(i)] || terminal_i)`.
pub fn kl_term(
    x0: &[usize],
    rates: &[FactorizedRateMatrix],
    schedule: &NoiseSchedule,
    terminal: &ProductDistribution,
) -> Result<f64> {
    check(rates, terminal)?;
    if x0.len() != rates.len() {
        return Err(Error::shape("state tuple length differs from rate count"));
    }
    let beta = schedule.beta_end();
    let mut total = 0.0;
    for (dim, (q, &x)) in rates.iter().zip(x0).enumerate() {
        if x >= q.n() {
            return Err(Error::domain("state outside the vocabulary"));
        }
        total += kl_divergence(&q.kernel_row(x, beta), terminal.marginal(dim).as_slice());
    }
    Ok(total)
}

/// Dataset average of [`kl_term`], computed once per distinct state and dimension.
pub fn mean_kl_term(
    dataset: &StateBatch,
    rates: &[FactorizedRateMatrix],
    schedule: &NoiseSchedule,
    terminal: &ProductDistribution,
) -> Result<f64> {
    check(rates, terminal)?;
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    if dataset.dims() != rates.len() {
        return Err(Error::shape("dataset dimension differs from rate count"));
    }
    let n = terminal.states();
    let beta = schedule.beta_end();
    let mut total = 0.0;
    for (dim, q) in rates.iter().enumerate() {
        let mut counts = vec![0usize; n];
        for row in dataset.rows() {
            let s = row[dim];
            if s >= n {
                return Err(Error::domain("state outside the vocabulary"));
            }
            counts[s] += 1;
        }
        let decays = q.spectral_decays(beta);
        for (x, &c) in counts.iter().enumerate() {
            if c > 0 {
                total += c as f64 * kl_divergence(&q.kernel_row_with(x, beta, &decays), terminal.marginal(dim).as_slice());
            }
        }
    }
    Ok(total / dataset.len() as f64)
}

/// Monte Carlo ELBO: `j_score` from `mc_samples` draws of `(x_0, t, x_t)` and
/// the exact dataset-mean terminal KL.
#[allow(clippy::too_many_arguments)]
pub fn elbo_estimate<S: RatioSource + ?Sized, R: Rng + ?Sized>(
    source: &S,
    dataset: &StateBatch,
    rates: &[FactorizedRateMatrix],
    schedule: &NoiseSchedule,
    terminal: &ProductDistribution,
    mc_samples: usize,
    eps_t: f64,
    rng: &mut R,
) -> Result<ElboReport> {
    if mc_samples < 2 {
        return Err(Error::domain("ELBO estimation needs at least two samples"));
    }
    let kl = mean_kl_term(dataset, rates, schedule, terminal)?;
    let batch = ScoreBatch::sample(dataset, rates, schedule, mc_samples, eps_t, rng)?;
    let terms: Vec<f64> = score_entropy_terms(source, &batch, rates, schedule, RatioTarget::Conditional)?;
    let m = terms.len() as f64;
    let mean = terms.iter().sum::<f64>() / m;
    let var = terms.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0);
    ElboReport::new(mean, kl, libm::sqrt(var / m), rates.len())
}
