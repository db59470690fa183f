//! Score-entropy objective, its gradient, and the exact ratio oracle.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{ForwardCache, RatioSource, ScoreModel};
use crate::prob::sample_categorical;
use crate::{Error, FactorizedRateMatrix, NoiseSchedule, ProductDistribution, Result, StateBatch, PROB_FLOOR};

/// Smallest oracle denominator accepted before the ratio is declared undefined.
const ORACLE_DENOMINATOR_FLOOR: f64 = 1e-300;

/// What the ratio model is regressed onto.
#[derive(Debug, Clone, Copy)]
pub enum RatioTarget<'a> {
    /// `p_{t|0}(y | x_0) / p_{t|0}(x_t | x_0)`: computable from one sample.
    Conditional,
    /// `p_t(y) / p_t(x_t)` under the given data marginals. Minimized exactly
    /// by the oracle; only available when `mu` is known.
    Marginal(&'a ProductDistribution),
}

/// One Monte Carlo draw of `(x_0, t, x_t)` per row.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreBatch {
    pub x0: StateBatch,
    pub t: Vec<f64>,
    pub xt: StateBatch,
    /// Lower end of the time window; the upper end is the schedule horizon.
    pub eps_t: f64,
}

impl ScoreBatch {
    /// Resamples `size` rows of `data`, draws `t ~ U(eps_t, T)` and noises each row.
    pub fn sample<R: Rng + ?Sized>(
        data: &StateBatch,
        rates: &[FactorizedRateMatrix],
        schedule: &NoiseSchedule,
        size: usize,
        eps_t: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(eps_t > 0.0 && eps_t < schedule.horizon) {
            return Err(Error::domain("eps_t must lie in (0, T)"));
        }
        let x0 = data.resample(size, rng)?;
        let mut t = Vec::with_capacity(size);
        let mut xt = StateBatch::new(data.dims());
        for row in x0.rows() {
            let ti = eps_t + (schedule.horizon - eps_t) * rng.random::<f64>();
            // The draw can land exactly on eps_t; the window is open there.
            let ti = if ti > eps_t { ti } else { eps_t * (1.0 + f64::EPSILON) };
            xt.push(&sample_xt_given_x0(row, rates, schedule, ti, rng)?)?;
            t.push(ti);
        }
        Ok(Self { x0, t, xt, eps_t })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    fn validate(&self, rates: &[FactorizedRateMatrix], schedule: &NoiseSchedule) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Empty("score batch"));
        }
        if self.x0.len() != self.len() || self.xt.len() != self.len() {
            return Err(Error::shape("score batch columns have different lengths"));
        }
        if self.x0.dims() != rates.len() || self.xt.dims() != rates.len() {
            return Err(Error::shape("score batch dimension differs from rate count"));
        }
        for &t in &self.t {
            if !(t > self.eps_t && t <= schedule.horizon) {
                return Err(Error::domain(alloc::format!("time {t} outside (eps_t, T]")));
            }
        }
        Ok(())
    }
}

/// Draws `x_t` one dimension at a time from the rows `exp(beta(t) Q_i)[x_0^(i)]`.
pub fn sample_xt_given_x0<R: Rng + ?Sized>(
    x0: &[usize],
    rates: &[FactorizedRateMatrix],
    schedule: &NoiseSchedule,
    t: f64,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if x0.len() != rates.len() {
        return Err(Error::shape("state tuple length differs from rate count"));
    }
    let beta = schedule.beta(t)?;
    x0.iter()
        .zip(rates)
        .map(|(&x, q)| {
            if x >= q.n() {
                return Err(Error::domain("state outside the vocabulary"));
            }
            if beta == 0.0 {
                return Ok(x);
            }
            Ok(sample_categorical(&q.kernel_row(x, beta), rng))
        })
        .collect()
}

/// Exact `p_t(y) / p_t(x_t)` per dimension, with `p_t = mu exp(beta(t) Q)`.
///
/// Numerators are floored at [`PROB_FLOOR`] so every entry is positive.
pub fn exact_score_oracle(
    mu: &ProductDistribution,
    rates: &[FactorizedRateMatrix],
    schedule: &NoiseSchedule,
    xt: &[usize],
    t: f64,
) -> Result<Vec<f64>> {
    if mu.dims() != rates.len() || xt.len() != rates.len() {
        return Err(Error::shape("oracle inputs disagree on dimension"));
    }
    let beta = schedule.beta(t)?;
    let n = mu.states();
    let mut out = Vec::with_capacity(rates.len() * n);
    for (dim, q) in rates.iter().enumerate() {
        let decays = q.spectral_decays(beta);
        let pt = q.evolve_cumulative(mu.marginal(dim).as_slice(), beta, &decays);
        let x = xt[dim];
        if x >= n {
            return Err(Error::domain("state outside the vocabulary"));
        }
        if !(pt[x] >= ORACLE_DENOMINATOR_FLOOR) {
            return Err(Error::DegenerateState { dim, state: x });
        }
        let den = pt[x].max(PROB_FLOOR);
        out.extend(pt.iter().map(|&v| v.max(PROB_FLOOR) / den));
    }
    Ok(out)
}

/// [`exact_score_oracle`] bundled with its inputs.
#[derive(Debug, Clone)]
pub struct ExactScoreOracle {
    pub mu: ProductDistribution,
    pub rates: Vec<FactorizedRateMatrix>,
    pub schedule: NoiseSchedule,
}

impl RatioSource for ExactScoreOracle {
    fn ratios(&self, xt: &[usize], t: f64) -> Result<Vec<f64>> {
        exact_score_oracle(&self.mu, &self.rates, &self.schedule, xt, t)
    }
}

/// Per-row integrand data: weights `sigma(t) Q[y][x_t]` and target ratios.
struct RowTerms {
    weights: Vec<f64>,
    ratios: Vec<f64>,
}

fn row_terms(
    rates: &[FactorizedRateMatrix],
    schedule: &NoiseSchedule,
    target: RatioTarget<'_>,
    x0: &[usize],
    xt: &[usize],
    t: f64,
) -> Result<RowTerms> {
    let n = rates[0].n();
    let beta = schedule.beta(t)?;
    let sigma = schedule.sigma(t)?;
    let mut weights = vec![0.0; rates.len() * n];
    let mut ratios = vec![0.0; rates.len() * n];
    for (dim, q) in rates.iter().enumerate() {
        let x = xt[dim];
        if x >= n || x0[dim] >= n {
            return Err(Error::domain("state outside the vocabulary"));
        }
        let p = match target {
            RatioTarget::Conditional => q.kernel_row(x0[dim], beta),
            RatioTarget::Marginal(mu) => q.transition_kernel(beta)?.vecmul(mu.marginal(dim).as_slice()),
        };
        let den = p[x].max(PROB_FLOOR);
        for y in 0..n {
            let w = sigma * q.inflow_rate(y, x);
            if w > 0.0 {
                weights[dim * n + y] = w;
                ratios[dim * n + y] = p[y].max(PROB_FLOOR) / den;
            }
        }
    }
    Ok(RowTerms { weights, ratios })
}

/// `s - r + r (ln r - ln s)`, zero at `s = r`; `ln_s` is passed to avoid `ln(exp(z))` drift.
fn bregman(s: f64, ln_s: f64, r: f64) -> f64 {
    s - r + r * (libm::log(r) - ln_s)
}

fn check_sources(rates: &[FactorizedRateMatrix]) -> Result<()> {
    if rates.is_empty() {
        return Err(Error::Empty("rate matrices"));
    }
    Ok(())
}

/// Per-row score-entropy integrands, each weighted by `T - eps_t`.
///
/// Their mean is [`score_entropy_loss`]; their spread gives its standard error.
pub fn score_entropy_terms<S: RatioSource + ?Sized>(
    source: &S,
    batch: &ScoreBatch,
    rates: &[FactorizedRateMatrix],
    schedule: &NoiseSchedule,
    target: RatioTarget<'_>,
) -> Result<Vec<f64>> {
    check_sources(rates)?;
    batch.validate(rates, schedule)?;
    let n = rates[0].n();
    let width = schedule.horizon - batch.eps_t;
    let mut out = Vec::with_capacity(batch.len());
    for b in 0..batch.len() {
        let (x0, xt, t) = (batch.x0.row(b), batch.xt.row(b), batch.t[b]);
        let terms = row_terms(rates, schedule, target, x0, xt, t)?;
        let s = source.ratios(xt, t)?;
        if s.len() != terms.ratios.len() {
            return Err(Error::shape("ratio source output has the wrong length"));
        }
        let mut total = 0.0;
        for (k, (&w, &r)) in terms.weights.iter().zip(&terms.ratios).enumerate() {
            if w == 0.0 {
                continue;
            }
            let term = w * bregman(s[k], libm::log(s[k]), r);
            if !term.is_finite() {
                return Err(Error::NonFiniteTerm { dim: k / n, y: k % n, t });
            }
            total += term;
        }
        out.push(total * width);
    }
    Ok(out)
}

/// Monte Carlo estimate of the score-entropy loss, weighted by `T - eps_t`
/// and averaged over the batch. Always nonnegative.
pub fn score_entropy_loss<S: RatioSource + ?Sized>(
    source: &S,
    batch: &ScoreBatch,
    rates: &[FactorizedRateMatrix],
    schedule: &NoiseSchedule,
    target: RatioTarget<'_>,
) -> Result<f64> {
    let terms = score_entropy_terms(source, batch, rates, schedule, target)?;
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}

/// `d loss / d ln s` for externally supplied ratios, one `d x n` block per row.
///
/// The loss is returned alongside; both use the same batch-mean scaling as
/// [`score_entropy_loss`].
pub fn score_output_grad(
    ratios: &[Vec<f64>],
    batch: &ScoreBatch,
    rates: &[FactorizedRateMatrix],
    schedule: &NoiseSchedule,
    target: RatioTarget<'_>,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let ln: Vec<Vec<f64>> = ratios
        .iter()
        .map(|s| s.iter().map(|&v| libm::log(v)).collect())
        .collect();
    output_grad_with_logs(ratios, &ln, batch, rates, schedule, target)
}

fn output_grad_with_logs(
    ratios: &[Vec<f64>],
    ln_ratios: &[Vec<f64>],
    batch: &ScoreBatch,
    rates: &[FactorizedRateMatrix],
    schedule: &NoiseSchedule,
    target: RatioTarget<'_>,
) -> Result<(f64, Vec<Vec<f64>>)> {
    check_sources(rates)?;
    batch.validate(rates, schedule)?;
    if ratios.len() != batch.len() {
        return Err(Error::shape("one ratio block per batch row is required"));
    }
    let n = rates[0].n();
    let scale = (schedule.horizon - batch.eps_t) / batch.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(batch.len());
    for b in 0..batch.len() {
        let (x0, xt, t) = (batch.x0.row(b), batch.xt.row(b), batch.t[b]);
        let terms = row_terms(rates, schedule, target, x0, xt, t)?;
        let s = &ratios[b];
        if s.len() != terms.ratios.len() {
            return Err(Error::shape("ratio block has the wrong length"));
        }
        let mut g = vec![0.0; s.len()];
        for (k, (&w, &r)) in terms.weights.iter().zip(&terms.ratios).enumerate() {
            if w == 0.0 {
                continue;
            }
            let term = w * bregman(s[k], ln_ratios[b][k], r);
            if !term.is_finite() {
                return Err(Error::NonFiniteTerm { dim: k / n, y: k % n, t });
            }
            loss += term;
            g[k] = scale * w * (s[k] - r);
        }
        grads.push(g);
    }
    Ok((loss * scale, grads))
}

/// Loss and its exact gradient with respect to every network parameter.
pub fn score_grad(
    model: &ScoreModel,
    batch: &ScoreBatch,
    rates: &[FactorizedRateMatrix],
    schedule: &NoiseSchedule,
    target: RatioTarget<'_>,
) -> Result<(f64, Vec<f64>)> {
    check_sources(rates)?;
    batch.validate(rates, schedule)?;
    let mut caches = Vec::with_capacity(batch.len());
    let mut ratios = Vec::with_capacity(batch.len());
    let mut logs = Vec::with_capacity(batch.len());
    for b in 0..batch.len() {
        let mut cache = ForwardCache::default();
        model.forward_cached(batch.xt.row(b), batch.t[b], &mut cache)?;
        ratios.push(cache.raw.iter().map(|&z| libm::exp(z)).collect::<Vec<_>>());
        logs.push(cache.raw.clone());
        caches.push(cache);
    }
    let (loss, d_raw) = output_grad_with_logs(&ratios, &logs, batch, rates, schedule, target)?;
    let mut grad = vec![0.0; model.param_count()];
    for (cache, d) in caches.iter().zip(&d_raw) {
        model.backward(cache, d, &mut grad);
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ProbVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn schedule() -> NoiseSchedule {
        NoiseSchedule::linear(0.1, 2.0, 1.0).unwrap()
    }

    struct Fixed(Vec<Vec<f64>>, Vec<Vec<usize>>);

    impl RatioSource for Fixed {
        fn ratios(&self, xt: &[usize], _t: f64) -> Result<Vec<f64>> {
            let idx = self.1.iter().position(|r| r == xt).expect("known row");
            Ok(self.0[idx].clone())
        }
    }

    fn random_setup(seed: u64, d: usize, n: usize) -> (Vec<FactorizedRateMatrix>, ProductDistribution, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rates = (0..d)
            .map(|_| {
                let mut perm: Vec<usize> = (0..n).collect();
                for i in (1..n).rev() {
                    perm.swap(i, rng.random_range(0..=i));
                }
                let a = (0..n - 1).map(|_| 2.0 * rng.random::<f64>()).collect();
                FactorizedRateMatrix::new(perm, a).unwrap()
            })
            .collect();
        let mu = ProductDistribution::new(
            (0..d)
                .map(|_| ProbVector::normalized((0..n).map(|_| 0.05 + rng.random::<f64>()).collect()).unwrap())
                .collect(),
        )
        .unwrap();
        (rates, mu, rng)
    }

    #[test]
    fn t_zero_keeps_state() {
        let (rates, _, mut rng) = random_setup(1, 3, 4);
        assert_eq!(sample_xt_given_x0(&[3, 1, 0], &rates, &schedule(), 0.0, &mut rng).unwrap(), vec![3, 1, 0]);
    }

    #[test]
    fn two_state_half_split() {
        // beta(t) = 1 for sigma constant 1 over T = 1.
        let sched = NoiseSchedule::linear(1.0, 1.0, 1.0).unwrap();
        let rates = vec![FactorizedRateMatrix::with_identity(vec![core::f64::consts::LN_2]).unwrap()];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = 100_000;
        let ones = (0..draws)
            .filter(|_| sample_xt_given_x0(&[0], &rates, &sched, 1.0, &mut rng).unwrap()[0] == 1)
            .count();
        let sd = libm::sqrt(draws as f64 * 0.25);
        assert!((ones as f64 - 0.5 * draws as f64).abs() < 3.0 * sd, "{ones}");
    }

    #[test]
    fn absorbing_limit_always_absorbs() {
        let sched = NoiseSchedule::linear(100.0, 100.0, 1.0).unwrap();
        let rates = vec![FactorizedRateMatrix::absorbing(5).unwrap()];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for x in 0..5 {
            assert_eq!(sample_xt_given_x0(&[x], &rates, &sched, 1.0, &mut rng).unwrap(), vec![4]);
        }
    }

    #[test]
    fn exact_ratio_gives_zero_loss_and_e_factor_gives_r_times_e_minus_2() {
        let (rates, _, mut rng) = random_setup(2, 2, 4);
        let sched = schedule();
        let data = StateBatch::from_rows(2, [[0usize, 1], [2, 3], [1, 1]]).unwrap();
        let batch = ScoreBatch::sample(&data, &rates, &sched, 6, 1e-3, &mut rng).unwrap();
        let mut exact = Vec::new();
        let mut keys = Vec::new();
        let mut expected_e = 0.0;
        for b in 0..batch.len() {
            let terms = row_terms(&rates, &sched, RatioTarget::Conditional, batch.x0.row(b), batch.xt.row(b), batch.t[b]).unwrap();
            // One row per distinct x_t keeps the fixed source unambiguous.
            if keys.iter().any(|k: &Vec<usize>| k.as_slice() == batch.xt.row(b)) {
                continue;
            }
            expected_e += terms.weights.iter().zip(&terms.ratios).map(|(w, r)| w * r * (core::f64::consts::E - 2.0)).sum::<f64>();
            keys.push(batch.xt.row(b).to_vec());
            exact.push(terms.ratios.iter().map(|&r| if r == 0.0 { 1.0 } else { r }).collect());
        }
        let kept: Vec<usize> = keys
            .iter()
            .map(|k| (0..batch.len()).find(|&b| batch.xt.row(b) == k.as_slice()).unwrap())
            .collect();
        let sub = ScoreBatch {
            x0: StateBatch::from_rows(2, kept.iter().map(|&b| batch.x0.row(b).to_vec())).unwrap(),
            t: kept.iter().map(|&b| batch.t[b]).collect(),
            xt: StateBatch::from_rows(2, kept.iter().map(|&b| batch.xt.row(b).to_vec())).unwrap(),
            eps_t: batch.eps_t,
        };
        let zero = score_entropy_loss(&Fixed(exact.clone(), keys.clone()), &sub, &rates, &sched, RatioTarget::Conditional).unwrap();
        assert!(zero.abs() < 1e-12, "{zero}");
        let e_times: Vec<Vec<f64>> = exact.iter().map(|r| r.iter().map(|v| v * core::f64::consts::E).collect()).collect();
        let loss = score_entropy_loss(&Fixed(e_times, keys), &sub, &rates, &sched, RatioTarget::Conditional).unwrap();
        let want = expected_e * (sched.horizon - sub.eps_t) / sub.len() as f64;
        assert!(loss > 0.0);
        assert!((loss - want).abs() < 1e-10 * want.max(1.0), "{loss} vs {want}");
        let (_, g) = score_output_grad(&exact, &sub, &rates, &sched, RatioTarget::Conditional).unwrap();
        assert!(g.iter().flatten().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn empty_batch_is_rejected() {
        let (rates, _, _) = random_setup(3, 1, 3);
        let batch = ScoreBatch {
            x0: StateBatch::new(1),
            t: vec![],
            xt: StateBatch::new(1),
            eps_t: 1e-3,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = ScoreModel::new(1, 3, &[4], 1.0, &mut rng).unwrap();
        assert_eq!(
            score_entropy_loss(&model, &batch, &rates, &schedule(), RatioTarget::Conditional),
            Err(Error::Empty("score batch"))
        );
    }

    #[test]
    fn oracle_point_mass_reduces_to_single_sample_ratio() {
        let (rates, _, _) = random_setup(4, 1, 5);
        let sched = schedule();
        let x0 = rates[0].perm()[0];
        let mu = ProductDistribution::new(vec![ProbVector::point_mass(5, x0).unwrap()]).unwrap();
        let t = 0.6;
        let row = rates[0].kernel_row(x0, sched.beta(t).unwrap());
        for xt in 0..5 {
            if row[xt] < 1e-6 {
                continue;
            }
            let s = exact_score_oracle(&mu, &rates, &sched, &[xt], t).unwrap();
            for y in 0..5 {
                let want = row[y].max(PROB_FLOOR) / row[xt];
                assert!((s[y] - want).abs() < 1e-10 * want.max(1.0), "{y}: {} vs {want}", s[y]);
            }
            assert!((s[xt] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn oracle_near_zero_time_is_self_ratio_on_support() {
        let (rates, mu, _) = random_setup(6, 2, 4);
        let sched = schedule();
        let s = exact_score_oracle(&mu, &rates, &sched, &[1, 2], 1e-9).unwrap();
        assert!((s[1] - 1.0).abs() < 1e-15 && (s[4 + 2] - 1.0).abs() < 1e-15);
        for y in 0..4 {
            let want = mu.marginal(0)[y] / mu.marginal(0)[1];
            assert!((s[y] - want).abs() < 1e-6 * want.max(1.0));
        }
    }

    #[test]
    fn oracle_rejects_unreachable_state() {
        let rates = vec![FactorizedRateMatrix::zero(3).unwrap()];
        let mu = ProductDistribution::new(vec![ProbVector::point_mass(3, 0).unwrap()]).unwrap();
        assert_eq!(
            exact_score_oracle(&mu, &rates, &schedule(), &[2], 0.5),
            Err(Error::DegenerateState { dim: 0, state: 2 })
        );
    }

    #[test]
    fn oracle_zeroes_marginal_loss_and_minimizes_conditional_loss() {
        for seed in 0..10 {
            let (rates, mu, mut rng) = random_setup(100 + seed, 2, 4);
            let sched = schedule();
            let mut data = StateBatch::new(2);
            let mut row = [0usize; 2];
            for _ in 0..64 {
                mu.sample_into(&mut rng, &mut row);
                data.push(&row).unwrap();
            }
            let batch = ScoreBatch::sample(&data, &rates, &sched, 32, 1e-3, &mut rng).unwrap();
            let oracle = ExactScoreOracle { mu: mu.clone(), rates: rates.clone(), schedule: sched };
            let marginal = score_entropy_loss(&oracle, &batch, &rates, &sched, RatioTarget::Marginal(&mu)).unwrap();
            assert!(marginal <= 1e-10, "{marginal}");
            let ratios: Vec<Vec<f64>> = (0..batch.len())
                .map(|b| oracle.ratios(batch.xt.row(b), batch.t[b]).unwrap())
                .collect();
            let (base, _) = score_output_grad(&ratios, &batch, &rates, &sched, RatioTarget::Marginal(&mu)).unwrap();
            assert!(base <= 1e-10);
            let scaled: Vec<Vec<f64>> = ratios.iter().map(|r| r.iter().map(|v| v * core::f64::consts::E).collect()).collect();
            let (bumped, _) = score_output_grad(&scaled, &batch, &rates, &sched, RatioTarget::Marginal(&mu)).unwrap();
            assert!(bumped > 0.0);
        }
    }

    #[test]
    fn grad_matches_finite_differences() {
        for seed in 0..5 {
            let (rates, mu, mut rng) = random_setup(200 + seed, 2, 3);
            let sched = schedule();
            let mut model = ScoreModel::new(2, 3, &[8, 8], 1.0, &mut rng).unwrap();
            for p in model.params_mut() {
                *p = 0.6 * (rng.random::<f64>() - 0.5);
            }
            let mut data = StateBatch::new(2);
            let mut row = [0usize; 2];
            for _ in 0..8 {
                mu.sample_into(&mut rng, &mut row);
                data.push(&row).unwrap();
            }
            let batch = ScoreBatch::sample(&data, &rates, &sched, 4, 1e-3, &mut rng).unwrap();
            let (loss, grad) = score_grad(&model, &batch, &rates, &sched, RatioTarget::Conditional).unwrap();
            let direct = score_entropy_loss(&model, &batch, &rates, &sched, RatioTarget::Conditional).unwrap();
            assert!((loss - direct).abs() < 1e-12 * direct.max(1.0));
            let h = 1e-4;
            for idx in (0..model.param_count()).step_by(5) {
                let mut plus = model.clone();
                plus.params_mut()[idx] += h;
                let mut minus = model.clone();
                minus.params_mut()[idx] -= h;
                let fd = (score_entropy_loss(&plus, &batch, &rates, &sched, RatioTarget::Conditional).unwrap()
                    - score_entropy_loss(&minus, &batch, &rates, &sched, RatioTarget::Conditional).unwrap())
                    / (2.0 * h);
                let tol = 1e-3 * fd.abs().max(grad[idx].abs()) + 1e-8;
                assert!((fd - grad[idx]).abs() <= tol, "seed {seed} param {idx}: {fd} vs {}", grad[idx]);
            }
        }
    }

    #[test]
    fn duplicated_rows_leave_gradient_unchanged() {
        let (rates, _, mut rng) = random_setup(7, 2, 3);
        let sched = schedule();
        let mut model = ScoreModel::new(2, 3, &[6], 1.0, &mut rng).unwrap();
        for p in model.params_mut() {
            *p = rng.random::<f64>() - 0.5;
        }
        let single = ScoreBatch {
            x0: StateBatch::from_rows(2, [[0usize, 2]]).unwrap(),
            t: vec![0.4],
            xt: StateBatch::from_rows(2, [[1usize, 2]]).unwrap(),
            eps_t: 1e-3,
        };
        let double = ScoreBatch {
            x0: StateBatch::from_rows(2, [[0usize, 2], [0, 2]]).unwrap(),
            t: vec![0.4, 0.4],
            xt: StateBatch::from_rows(2, [[1usize, 2], [1, 2]]).unwrap(),
            eps_t: 1e-3,
        };
        let (l1, g1) = score_grad(&model, &single, &rates, &sched, RatioTarget::Conditional).unwrap();
        let (l2, g2) = score_grad(&model, &double, &rates, &sched, RatioTarget::Conditional).unwrap();
        assert!((l1 - l2).abs() < 1e-14 * l1.max(1.0));
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() < 1e-14 * a.abs().max(1.0));
        }
    }
}
