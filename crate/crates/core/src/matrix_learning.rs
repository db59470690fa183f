//! Forward stage: fit the rate parameters by minimizing the expected KL
//! between each kernel row `exp(beta(T) Q)[x_0]` and a terminal marginal.
//!
//! The gradient treats the terminal marginal as a constant. Inside the loop
//! that constant is the current terminal prediction, refreshed after every
//! accepted step, which matches the alternating update of `Q` and `p_T`.

use alloc::vec;
use alloc::vec::Vec;

use crate::prob::{kl_divergence, ProductDistribution};
use crate::rate::FactorizedRateMatrix;
use crate::schedule::NoiseSchedule;
use crate::states::StateBatch;
use crate::{Error, Result, PROB_FLOOR};

/// Starting point for the rate parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// `a_i = 0` except `a_{n-1} = 1`: the last sorted state absorbs.
    AbsorbingText,
    /// Every `a_i = 1e-5`.
    UniformSmall,
}

impl InitScheme {
    pub fn build(self, n: usize) -> Result<FactorizedRateMatrix> {
        match self {
            InitScheme::AbsorbingText => FactorizedRateMatrix::absorbing(n),
            InitScheme::UniformSmall => FactorizedRateMatrix::uniform_small(n, 1e-5),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixLearnState {
    pub rates: Vec<FactorizedRateMatrix>,
    pub p0_estimate: ProductDistribution,
    pub step_size: f64,
    pub loss_history: Vec<f64>,
}

impl MatrixLearnState {
    pub fn new(init: InitScheme, p0_estimate: ProductDistribution, step_size: f64) -> Result<Self> {
        let n = p0_estimate.states();
        let rates = (0..p0_estimate.dims())
            .map(|_| init.build(n))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            rates,
            p0_estimate,
            step_size,
            loss_history: Vec::new(),
        })
    }

    fn check_batch(&self, batch: &StateBatch, target: &ProductDistribution) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Empty("matrix-learning batch"));
        }
        if batch.dims() != self.rates.len() || target.dims() != self.rates.len() {
            return Err(Error::shape("batch, target and rates disagree on dimensions"));
        }
        Ok(())
    }
}

/// `p_{T}` per dimension: `p0_estimate[i] exp(beta(T) Q[i])`.
pub fn predict_terminal(
    state: &MatrixLearnState,
    schedule: &NoiseSchedule,
) -> Result<ProductDistribution> {
    let beta = schedule.beta_end();
    let marginals = state
        .rates
        .iter()
        .zip(state.p0_estimate.marginals())
        .map(|(q, p)| q.evolve(p, beta))
        .collect::<Result<Vec<_>>>()?;
    ProductDistribution::new(marginals)
}

/// How often each state occurs in each dimension of the batch.
fn state_counts(batch: &StateBatch, n: usize) -> Result<Vec<Vec<usize>>> {
    let mut counts = vec![vec![0usize; n]; batch.dims()];
    for row in batch.rows() {
        for (dim, &s) in row.iter().enumerate() {
            if s >= n {
                return Err(Error::domain(alloc::format!("state {s} outside [0, {n})")));
            }
            counts[dim][s] += 1;
        }
    }
    Ok(counts)
}

/// Batch mean of `sum_i KL(exp(beta(T) Q_i)[x_0^(i)] || target_i)`.
pub fn jq_loss(
    state: &MatrixLearnState,
    batch: &StateBatch,
    schedule: &NoiseSchedule,
    target: &ProductDistribution,
) -> Result<f64> {
    state.check_batch(batch, target)?;
    let beta = schedule.beta_end();
    let n = target.states();
    let counts = state_counts(batch, n)?;
    let mut total = 0.0;
    for (dim, q) in state.rates.iter().enumerate() {
        let kernel = q.transition_kernel(beta)?;
        let m = target.marginal(dim).as_slice();
        for (x, &c) in counts[dim].iter().enumerate() {
            if c > 0 {
                total += c as f64 * kl_divergence(kernel.row(x), m);
            }
        }
    }
    let loss = total / batch.len() as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            context: "matrix-learning loss".into(),
        });
    }
    Ok(loss)
}

/// Gradient of [`jq_loss`] with respect to every `a_k`, target held fixed.
///
/// For a row starting at sorted position `i` the loss is
/// `sum_{k >= i} D_k (g_k - g_{k+1})` up to a constant, with
/// `g_j = ln r_j - ln m_j + 1`, and `dD_k/da_m = -beta D_k [k <= m]`.
pub fn jq_grad(
    state: &MatrixLearnState,
    batch: &StateBatch,
    schedule: &NoiseSchedule,
    target: &ProductDistribution,
) -> Result<Vec<Vec<f64>>> {
    state.check_batch(batch, target)?;
    let beta = schedule.beta_end();
    let n = target.states();
    let counts = state_counts(batch, n)?;
    let scale = 1.0 / batch.len() as f64;
    let mut grads = Vec::with_capacity(state.rates.len());
    for (dim, q) in state.rates.iter().enumerate() {
        let perm = q.perm();
        let m = target.marginal(dim).as_slice();
        let decays = q.spectral_decays(beta);
        let mut grad = vec![0.0; n - 1];
        for (x, &c) in counts[dim].iter().enumerate() {
            if c == 0 {
                continue;
            }
            let i = q.inv_perm()[x];
            let row = q.sorted_kernel_row_raw(i, beta, &decays);
            let g: Vec<f64> = (0..n)
                .map(|j| {
                    if j < i {
                        0.0
                    } else {
                        libm::log(row[j].max(PROB_FLOOR)) - libm::log(m[perm[j]].max(PROB_FLOOR))
                            + 1.0
                    }
                })
                .collect();
            let weight = c as f64 * scale;
            let mut prefix = 0.0;
            for k in i..n - 1 {
                prefix += decays[k] * (g[k] - g[k + 1]);
                grad[k] -= weight * beta * prefix;
            }
        }
        grads.push(grad);
    }
    Ok(grads)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatrixLoopConfig {
    pub max_step: usize,
    pub eps_q: f64,
    /// Re-predict the terminal marginal after each accepted step.
    pub refresh_terminal: bool,
    pub max_backtracks: usize,
}

impl Default for MatrixLoopConfig {
    fn default() -> Self {
        Self {
            max_step: 200,
            eps_q: 1e-6,
            refresh_terminal: true,
            max_backtracks: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MatrixLoopReport {
    pub updates: usize,
    pub halvings: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Projected gradient descent with backtracking on the rate parameters.
pub fn matrix_learning_loop(
    state: &mut MatrixLearnState,
    batch: &StateBatch,
    schedule: &NoiseSchedule,
    terminal: &mut ProductDistribution,
    config: &MatrixLoopConfig,
) -> Result<MatrixLoopReport> {
    if config.max_step == 0 {
        return Err(Error::domain("max_step must be at least 1"));
    }
    let mut report = MatrixLoopReport::default();
    let mut loss = jq_loss(state, batch, schedule, terminal)?;
    report.initial_loss = loss;
    for _ in 0..config.max_step {
        if loss < config.eps_q {
            break;
        }
        let grad = jq_grad(state, batch, schedule, terminal)?;
        let current: Vec<Vec<f64>> = state.rates.iter().map(|q| q.params().to_vec()).collect();
        let mut accepted = None;
        for _ in 0..=config.max_backtracks {
            let eta = state.step_size;
            let mut trial = state.clone();
            for ((q, a), g) in trial.rates.iter_mut().zip(&current).zip(&grad) {
                let next = a.iter().zip(g).map(|(a, g)| (a - eta * g).max(0.0)).collect();
                q.set_params(next)?;
            }
            let trial_loss = jq_loss(&trial, batch, schedule, terminal)?;
            if trial_loss <= loss {
                accepted = Some((trial.rates, trial_loss));
                break;
            }
            state.step_size *= 0.5;
            report.halvings += 1;
        }
        let Some((rates, new_loss)) = accepted else {
            break;
        };
        state.rates = rates;
        state.loss_history.push(new_loss);
        report.updates += 1;
        if config.refresh_terminal {
            *terminal = predict_terminal(state, schedule)?;
            loss = jq_loss(state, batch, schedule, terminal)?;
        } else {
            loss = new_loss;
        }
    }
    report.final_loss = loss;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::ProbVector;

    fn schedule_beta_one() -> NoiseSchedule {
        NoiseSchedule::linear(1.0, 1.0, 1.0).unwrap()
    }

    fn single(p: &[f64]) -> ProductDistribution {
        ProductDistribution::new(vec![ProbVector::new(p.to_vec()).unwrap()]).unwrap()
    }

    fn two_state_state(a: f64, p0: &[f64]) -> MatrixLearnState {
        MatrixLearnState {
            rates: vec![FactorizedRateMatrix::with_identity(vec![a]).unwrap()],
            p0_estimate: single(p0),
            step_size: 0.1,
            loss_history: Vec::new(),
        }
    }

    #[test]
    fn loss_vanishes_for_frozen_point_masses() {
        let state = MatrixLearnState {
            rates: vec![FactorizedRateMatrix::zero(3).unwrap()],
            p0_estimate: single(&[0.0, 1.0, 0.0]),
            step_size: 0.1,
            loss_history: Vec::new(),
        };
        let batch = StateBatch::from_rows(1, [[1], [1]]).unwrap();
        let s = schedule_beta_one();
        let target = predict_terminal(&state, &s).unwrap();
        assert_eq!(jq_loss(&state, &batch, &s, &target).unwrap(), 0.0);
    }

    #[test]
    fn two_state_loss_value() {
        let state = two_state_state(libm::log(2.0), &[0.5, 0.5]);
        let s = schedule_beta_one();
        let target = predict_terminal(&state, &s).unwrap();
        assert!((target.marginal(0)[1] - 0.75).abs() < 1e-15);
        let batch = StateBatch::from_rows(1, [[0]]).unwrap();
        let loss = jq_loss(&state, &batch, &s, &target).unwrap();
        let expected = 0.5 * libm::log(2.0) + 0.5 * libm::log(2.0 / 3.0);
        assert!((loss - expected).abs() < 1e-14);
    }

    #[test]
    fn identical_dimensions_double_the_loss() {
        let one = two_state_state(0.8, &[0.3, 0.7]);
        let two = MatrixLearnState {
            rates: vec![one.rates[0].clone(), one.rates[0].clone()],
            p0_estimate: ProductDistribution::new(vec![
                one.p0_estimate.marginal(0).clone(),
                one.p0_estimate.marginal(0).clone(),
            ])
            .unwrap(),
            ..one.clone()
        };
        let s = schedule_beta_one();
        let b1 = StateBatch::from_rows(1, [[0], [1], [0]]).unwrap();
        let b2 = StateBatch::from_rows(2, [[0, 0], [1, 1], [0, 0]]).unwrap();
        let t1 = predict_terminal(&one, &s).unwrap();
        let t2 = predict_terminal(&two, &s).unwrap();
        let l1 = jq_loss(&one, &b1, &s, &t1).unwrap();
        let l2 = jq_loss(&two, &b2, &s, &t2).unwrap();
        assert!((l2 - 2.0 * l1).abs() < 1e-14);
        let g1 = jq_grad(&one, &b1, &s, &t1).unwrap();
        let g2 = jq_grad(&two, &b2, &s, &t2).unwrap();
        assert_eq!(g2[0], g1[0]);
        assert_eq!(g2[1], g1[0]);
    }

    #[test]
    fn gradient_vanishes_at_matched_optimum() {
        let state = two_state_state(libm::log(2.0), &[1.0, 0.0]);
        let s = schedule_beta_one();
        let batch = StateBatch::from_rows(1, [[0]]).unwrap();
        let target = single(&[0.5, 0.5]);
        assert!(jq_loss(&state, &batch, &s, &target).unwrap() < 1e-15);
        let g = jq_grad(&state, &batch, &s, &target).unwrap();
        assert!(g[0][0].abs() <= 1e-8);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let state = MatrixLearnState {
            rates: vec![FactorizedRateMatrix::new(vec![2, 0, 3, 1], vec![0.4, 0.9, 0.2]).unwrap()],
            p0_estimate: single(&[0.1, 0.2, 0.3, 0.4]),
            step_size: 0.1,
            loss_history: Vec::new(),
        };
        let s = NoiseSchedule::linear(0.2, 2.0, 1.0).unwrap();
        let batch = StateBatch::from_rows(1, [[0], [2], [3], [2]]).unwrap();
        let target = predict_terminal(&state, &s).unwrap();
        let g = jq_grad(&state, &batch, &s, &target).unwrap();
        let h = 1e-5;
        for k in 0..3 {
            let eval = |delta: f64| {
                let mut st = state.clone();
                let mut a = st.rates[0].params().to_vec();
                a[k] += delta;
                st.rates[0].set_params(a).unwrap();
                jq_loss(&st, &batch, &s, &target).unwrap()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            assert!((fd - g[0][k]).abs() <= 1e-5 * fd.abs().max(1e-3), "k={k}: {fd} vs {}", g[0][k]);
        }
    }

    #[test]
    fn loop_recovers_ln2() {
        let mut state = two_state_state(0.0, &[0.5, 0.5]);
        let s = schedule_beta_one();
        let batch = StateBatch::from_rows(1, [[0]]).unwrap();
        let mut terminal = single(&[0.5, 0.5]);
        let cfg = MatrixLoopConfig {
            max_step: 500,
            eps_q: 1e-6,
            refresh_terminal: false,
            ..Default::default()
        };
        let report = matrix_learning_loop(&mut state, &batch, &s, &mut terminal, &cfg).unwrap();
        assert!(report.final_loss <= 1e-6, "{report:?}");
        assert!(report.updates <= 500);
        let exact = crate::bridge::exact_rate_matrix(
            &ProbVector::new(vec![0.25, 0.75]).unwrap(),
            &ProbVector::uniform(2).unwrap(),
        )
        .unwrap();
        assert!((state.rates[0].params()[0] - exact.params()[0]).abs() < 2e-3);
    }

    #[test]
    fn loop_contracts() {
        let s = schedule_beta_one();
        let batch = StateBatch::from_rows(1, [[0]]).unwrap();

        let mut converged = two_state_state(libm::log(2.0), &[0.5, 0.5]);
        let mut terminal = single(&[0.5, 0.5]);
        let cfg = MatrixLoopConfig {
            refresh_terminal: false,
            ..Default::default()
        };
        let r = matrix_learning_loop(&mut converged, &batch, &s, &mut terminal, &cfg).unwrap();
        assert_eq!(r.updates, 0);

        let mut state = two_state_state(0.0, &[0.5, 0.5]);
        let mut terminal = predict_terminal(&state, &s).unwrap();
        let cfg = MatrixLoopConfig {
            max_step: 3,
            ..Default::default()
        };
        let r = matrix_learning_loop(&mut state, &batch, &s, &mut terminal, &cfg).unwrap();
        assert!(r.updates <= 3);
        assert_eq!(state.loss_history.len(), r.updates);
        assert!(state.rates[0].params().iter().all(|a| *a >= 0.0));
        assert!(r.final_loss <= r.initial_loss || r.halvings > 0);
    }
}
