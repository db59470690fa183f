//! Reverse-time generation on a uniform Euler grid, and `p_0` estimation.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::prob::sample_categorical;
use crate::score::RatioSource;
use crate::{Error, FactorizedRateMatrix, NoiseSchedule, ProbVector, ProductDistribution, Result, StateBatch};

pub use crate::prob::tv_distance;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub num_steps: usize,
    pub eps_t: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            num_steps: 128,
            eps_t: 1e-3,
        }
    }
}

impl SamplerConfig {
    fn validate(&self, schedule: &NoiseSchedule) -> Result<f64> {
        if self.num_steps == 0 || !(self.eps_t > 0.0 && self.eps_t < schedule.horizon) {
            return Err(Error::domain("sampler needs num_steps >= 1 and 0 < eps_t < T"));
        }
        Ok((schedule.horizon - self.eps_t) / self.num_steps as f64)
    }
}

/// Counters exposing when the step size is too coarse.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SamplerDiagnostics {
    /// Categoricals that had a negative stay probability clamped to zero.
    pub clamped: u64,
    /// Categoricals with no mass left after clamping; the state was kept.
    pub stuck: u64,
}

/// The Euler categorical `delta_x + dt * Qhat[x]` for one dimension.
///
/// `None` when nothing survives clamping.
fn euler_categorical(
    q: &FactorizedRateMatrix,
    sigma: f64,
    ratios: &[f64],
    x: usize,
    dt: f64,
    diagnostics: &mut SamplerDiagnostics,
) -> Result<Option<Vec<f64>>> {
    let mut row = q.reverse_rate_row(sigma, ratios, x)?;
    for v in &mut row {
        *v *= dt;
    }
    row[x] += 1.0;
    if row[x] < 0.0 {
        row[x] = 0.0;
        diagnostics.clamped += 1;
    }
    let total: f64 = row.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        diagnostics.stuck += 1;
        return Ok(None);
    }
    row.iter_mut().for_each(|v| *v /= total);
    Ok(Some(row))
}

fn check_inputs(xt: &[usize], ratios: &[f64], rates: &[FactorizedRateMatrix]) -> Result<usize> {
    let n = rates.first().ok_or(Error::Empty("rate matrices"))?.n();
    if xt.len() != rates.len() || ratios.len() != rates.len() * n {
        return Err(Error::shape("state, ratio and rate dimensions disagree"));
    }
    Ok(n)
}

/// One reverse Euler step from `t` to `t - dt`, every dimension independent.
#[allow(clippy::too_many_arguments)]
pub fn euler_reverse_step<R: Rng + ?Sized>(
    xt: &[usize],
    t: f64,
    dt: f64,
    ratios: &[f64],
    rates: &[FactorizedRateMatrix],
    schedule: &NoiseSchedule,
    rng: &mut R,
    diagnostics: &mut SamplerDiagnostics,
) -> Result<Vec<usize>> {
    let n = check_inputs(xt, ratios, rates)?;
    if !(dt >= 0.0) {
        return Err(Error::domain("dt must be nonnegative"));
    }
    if dt == 0.0 {
        return Ok(xt.to_vec());
    }
    let sigma = schedule.sigma(t)?;
    let mut out = Vec::with_capacity(xt.len());
    for (dim, q) in rates.iter().enumerate() {
        let x = xt[dim];
        let next = match euler_categorical(q, sigma, &ratios[dim * n..(dim + 1) * n], x, dt, diagnostics)? {
            Some(p) => sample_categorical(&p, rng),
            None => x,
        };
        out.push(next);
    }
    Ok(out)
}

/// Draws `x_T` from `terminal` and walks it back to `eps_t`.
#[allow(clippy::too_many_arguments)]
fn trajectory<S: RatioSource + ?Sized, R: Rng + ?Sized>(
    dt: f64,
    steps: usize,
    terminal: &ProductDistribution,
    rates: &[FactorizedRateMatrix],
    schedule: &NoiseSchedule,
    source: &S,
    rng: &mut R,
    diagnostics: &mut SamplerDiagnostics,
) -> Result<Vec<usize>> {
    let mut x = vec![0usize; terminal.dims()];
    terminal.sample_into(rng, &mut x);
    for k in 0..steps {
        let t = schedule.horizon - k as f64 * dt;
        let ratios = source.ratios(&x, t)?;
        x = euler_reverse_step(&x, t, dt, &ratios, rates, schedule, rng, diagnostics)?;
    }
    Ok(x)
}

fn check_terminal(terminal: &ProductDistribution, rates: &[FactorizedRateMatrix]) -> Result<()> {
    if terminal.dims() != rates.len() || rates.iter().any(|q| q.n() != terminal.states()) {
        return Err(Error::shape("terminal distribution and rates disagree"));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn generate_with_diagnostics<S: RatioSource + ?Sized, R: Rng + ?Sized>(
    cfg: &SamplerConfig,
    terminal: &ProductDistribution,
    rates: &[FactorizedRateMatrix],
    schedule: &NoiseSchedule,
    source: &S,
    rng: &mut R,
    count: usize,
) -> Result<(StateBatch, SamplerDiagnostics)> {
    let dt = cfg.validate(schedule)?;
    check_terminal(terminal, rates)?;
    let mut diagnostics = SamplerDiagnostics::default();
    let mut out = StateBatch::new(terminal.dims());
    for _ in 0..count {
        let x = trajectory(dt, cfg.num_steps, terminal, rates, schedule, source, rng, &mut diagnostics)?;
        out.push(&x)?;
    }
    Ok((out, diagnostics))
}

pub fn generate<S: RatioSource + ?Sized, R: Rng + ?Sized>(
    cfg: &SamplerConfig,
    terminal: &ProductDistribution,
    rates: &[FactorizedRateMatrix],
    schedule: &NoiseSchedule,
    source: &S,
    rng: &mut R,
    count: usize,
) -> Result<StateBatch> {
    generate_with_diagnostics(cfg, terminal, rates, schedule, source, rng, count).map(|(b, _)| b)
}

/// Per-dimension average over `m` trajectories of the final Euler categorical.
pub fn estimate_mu<S: RatioSource + ?Sized, R: Rng + ?Sized>(
    cfg: &SamplerConfig,
    terminal: &ProductDistribution,
    rates: &[FactorizedRateMatrix],
    schedule: &NoiseSchedule,
    source: &S,
    rng: &mut R,
    m: usize,
) -> Result<ProductDistribution> {
    if m == 0 {
        return Err(Error::domain("estimate_mu needs at least one trajectory"));
    }
    let dt = cfg.validate(schedule)?;
    check_terminal(terminal, rates)?;
    let (d, n) = (terminal.dims(), terminal.states());
    let mut diagnostics = SamplerDiagnostics::default();
    let mut acc = vec![vec![0.0; n]; d];
    let t_last = schedule.horizon - (cfg.num_steps - 1) as f64 * dt;
    for _ in 0..m {
        let x = trajectory(dt, cfg.num_steps - 1, terminal, rates, schedule, source, rng, &mut diagnostics)?;
        let ratios = source.ratios(&x, t_last)?;
        check_inputs(&x, &ratios, rates)?;
        let sigma = schedule.sigma(t_last)?;
        for (dim, q) in rates.iter().enumerate() {
            match euler_categorical(q, sigma, &ratios[dim * n..(dim + 1) * n], x[dim], dt, &mut diagnostics)? {
                Some(p) => acc[dim].iter_mut().zip(&p).for_each(|(a, v)| *a += v),
                None => acc[dim][x[dim]] += 1.0,
            }
        }
    }
    let marginals = acc
        .into_iter()
        .map(|row| ProbVector::normalized(row.into_iter().map(|v| v / m as f64).collect()))
        .collect::<Result<Vec<_>>>()?;
    ProductDistribution::new(marginals)
}

/// Empirical per-dimension marginals of a sample batch.
pub fn empirical_marginals(samples: &StateBatch, n: usize) -> Result<ProductDistribution> {
    if samples.is_empty() {
        return Err(Error::Empty("samples"));
    }
    let mut counts = vec![vec![0.0; n]; samples.dims()];
    for row in samples.rows() {
        for (dim, &s) in row.iter().enumerate() {
            if s >= n {
                return Err(Error::domain("sample outside the vocabulary"));
            }
            counts[dim][s] += 1.0;
        }
    }
    let total = samples.len() as f64;
    ProductDistribution::new(
        counts
            .into_iter()
            .map(|c| ProbVector::normalized(c.into_iter().map(|v| v / total).collect()))
            .collect::<Result<Vec<_>>>()?,
    )
}
