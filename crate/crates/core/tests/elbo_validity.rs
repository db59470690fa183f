//! The Monte Carlo bound against the reverse process solved densely.
//!
//! On a joint space of `n^d = 9` states the oracle reverse generator is
//! integrated with RK4, giving the model's exact marginal at `eps_t`. The
//! bound over `[eps_t, T]` must dominate `E_x0 KL(p_{eps|0}(.|x0) || p_model)`,
//! which is the reverse-process negative log-likelihood of the noised data
//! less the forward conditional entropy, and turns into `-log p_model(x0)`
//! as `eps_t -> 0`.

use dmb_core::evaluation::elbo_estimate;
use dmb_core::score::{exact_score_oracle, ExactScoreOracle};
use dmb_core::{FactorizedRateMatrix, NoiseSchedule, ProbVector, ProductDistribution, StateBatch};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const N: usize = 3;
const D: usize = 2;
const EPS: f64 = 1e-3;

fn decode(k: usize) -> [usize; D] {
    [k / N, k % N]
}

fn encode(x: &[usize]) -> usize {
    x[0] * N + x[1]
}

/// `dq/ds` for the reverse chain at forward time `t`.
fn reverse_derivative(
    q: &[f64],
    t: f64,
    mu: &ProductDistribution,
    rates: &[FactorizedRateMatrix],
    sched: &NoiseSchedule,
) -> Vec<f64> {
    let sigma = sched.sigma(t).unwrap();
    let mut dq = vec![0.0; q.len()];
    for k in 0..q.len() {
        if q[k] == 0.0 {
            continue;
        }
        let x = decode(k);
        let s = exact_score_oracle(mu, rates, sched, &x, t).unwrap();
        for dim in 0..D {
            for y in 0..N {
                if y == x[dim] {
                    continue;
                }
                let rate = sigma * rates[dim].inflow_rate(y, x[dim]) * s[dim * N + y];
                let mut to = x;
                to[dim] = y;
                dq[encode(&to)] += q[k] * rate;
                dq[k] -= q[k] * rate;
            }
        }
    }
    dq
}

fn rk4_reverse(
    start: Vec<f64>,
    mu: &ProductDistribution,
    rates: &[FactorizedRateMatrix],
    sched: &NoiseSchedule,
    steps: usize,
) -> Vec<f64> {
    let h = (sched.horizon - EPS) / steps as f64;
    let mut q = start;
    let axpy = |q: &[f64], k: &[f64], c: f64| q.iter().zip(k).map(|(a, b)| a + c * b).collect::<Vec<_>>();
    for i in 0..steps {
        let t = sched.horizon - i as f64 * h;
        let k1 = reverse_derivative(&q, t, mu, rates, sched);
        let k2 = reverse_derivative(&axpy(&q, &k1, h / 2.0), t - h / 2.0, mu, rates, sched);
        let k3 = reverse_derivative(&axpy(&q, &k2, h / 2.0), t - h / 2.0, mu, rates, sched);
        let k4 = reverse_derivative(&axpy(&q, &k3, h), t - h, mu, rates, sched);
        for j in 0..q.len() {
            q[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
    }
    q
}

fn joint(marginals: &[Vec<f64>]) -> Vec<f64> {
    (0..N * N).map(|k| {
        let x = decode(k);
        marginals[0][x[0]] * marginals[1][x[1]]
    }).collect()
}

#[test]
fn bound_dominates_reverse_process_likelihood() {
    let sched = NoiseSchedule::linear(0.2, 3.0, 1.0).unwrap();
    let rates = vec![
        FactorizedRateMatrix::new(vec![1, 0, 2], vec![0.6, 1.3]).unwrap(),
        FactorizedRateMatrix::new(vec![2, 1, 0], vec![0.4, 0.9]).unwrap(),
    ];
    // Tenths, so a 100-row dataset realizes mu exactly.
    let m0 = [0.2, 0.5, 0.3];
    let m1 = [0.6, 0.1, 0.3];
    let mu = ProductDistribution::new(vec![ProbVector::new(m0.to_vec()).unwrap(), ProbVector::new(m1.to_vec()).unwrap()]).unwrap();
    let mut data = StateBatch::new(D);
    for a in 0..N {
        for b in 0..N {
            let count = (100.0 * m0[a] * m1[b]).round() as usize;
            for _ in 0..count {
                data.push(&[a, b]).unwrap();
            }
        }
    }
    assert_eq!(data.len(), 100);

    let beta_t = sched.beta_end();
    let terminal = ProductDistribution::new(
        rates.iter().zip(mu.marginals()).map(|(q, p)| q.evolve(p, beta_t).unwrap()).collect(),
    )
    .unwrap();
    let start = joint(&terminal.marginals().iter().map(|p| p.as_slice().to_vec()).collect::<Vec<_>>());
    let model_eps = rk4_reverse(start, &mu, &rates, &sched, 4000);

    // Theorem-level check: the exact reverse chain lands on mu exp(beta(eps) Q).
    let beta_eps = sched.beta(EPS).unwrap();
    let forward_eps = joint(&rates.iter().zip(mu.marginals()).map(|(q, p)| q.evolve_slice(p.as_slice(), beta_eps).unwrap()).collect::<Vec<_>>());
    for (a, b) in model_eps.iter().zip(&forward_eps) {
        assert!((a - b).abs() < 1e-7, "{a} vs {b}");
    }

    let mut nll = 0.0;
    for k in 0..N * N {
        let x0 = decode(k);
        let cond = joint(&[rates[0].kernel_row(x0[0], beta_eps), rates[1].kernel_row(x0[1], beta_eps)]);
        let kl: f64 = cond
            .iter()
            .zip(&model_eps)
            .filter(|(c, _)| **c > 0.0)
            .map(|(c, m)| c * (c / m).ln())
            .sum();
        nll += mu.prob_of(&x0) * kl;
    }

    let oracle = ExactScoreOracle { mu: mu.clone(), rates: rates.clone(), schedule: sched };
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let report = elbo_estimate(&oracle, &data, &rates, &sched, &terminal, 200_000, EPS, &mut rng).unwrap();
    assert!(
        report.total_nats >= nll - 3.0 * report.mc_std_error,
        "bound {} < nll {} (se {})",
        report.total_nats,
        nll,
        report.mc_std_error
    );
    // The oracle bound is tight up to its Monte Carlo error.
    assert!((report.total_nats - nll).abs() < 5.0 * report.mc_std_error + 1e-3, "{report:?} vs {nll}");
}
