//! Fast oracle and invariant checks runnable from the CLI.

use dmb_core::bridge::exact_rate_matrix;
use dmb_core::evaluation::kl_term;
use dmb_core::score::{score_entropy_loss, ExactScoreOracle, RatioTarget, ScoreBatch};
use dmb_core::{FactorizedRateMatrix, NoiseSchedule, ProbVector, ProductDistribution, StateBatch};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::oracle;

/// Random permutation of `0..n` with rates drawn from `[0, a_max]`.
pub fn random_rate<R: Rng + ?Sized>(rng: &mut R, n: usize, a_max: f64) -> FactorizedRateMatrix {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let a = (1..n).map(|_| rng.random_range(0.0..=a_max)).collect();
    FactorizedRateMatrix::new(perm, a).expect("valid random rate matrix")
}

/// Strictly positive random categorical with a wide spread of magnitudes.
pub fn random_prob<R: Rng + ?Sized>(rng: &mut R, n: usize) -> ProbVector {
    let w = (0..n).map(|_| (rng.random_range(-4.0..2.0f64)).exp()).collect();
    ProbVector::normalized(w).expect("positive weights")
}

pub fn random_product<R: Rng + ?Sized>(rng: &mut R, d: usize, n: usize) -> ProductDistribution {
    ProductDistribution::new((0..d).map(|_| random_prob(rng, n)).collect()).expect("matching shapes")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    /// Worst observed error against the threshold.
    pub worst: f64,
    pub threshold: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.worst <= self.threshold
    }
}

fn kernel_vs_expm(rng: &mut ChaCha8Rng) -> f64 {
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(2..=10);
        let q = random_rate(rng, n, 3.0);
        let beta = rng.random_range(0.0..5.0);
        let Ok(k) = q.transition_kernel(beta) else { return f64::INFINITY };
        worst = worst.max(k.max_abs_diff(&oracle::dense_kernel(&q, beta)));
    }
    worst
}

fn bridge_round_trip(rng: &mut ChaCha8Rng) -> f64 {
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(2..=16);
        let (p, q) = (random_prob(rng, n), random_prob(rng, n));
        let Ok(rate) = exact_rate_matrix(&p, &q) else { return f64::INFINITY };
        let Ok(out) = rate.evolve_slice(q.as_slice(), 1.0) else { return f64::INFINITY };
        let err = out.iter().zip(p.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(err);
    }
    worst
}

fn conservation(rng: &mut ChaCha8Rng) -> f64 {
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(2..=12);
        let q = random_rate(rng, n, 3.0);
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
        let Ok(out) = q.evolve_slice(&v, rng.random_range(0.0..5.0)) else { return f64::INFINITY };
        let (a, b) = (v.iter().sum::<f64>(), out.iter().sum::<f64>());
        worst = worst.max((a - b).abs() / a.max(1.0));
    }
    worst
}

fn kl_factorization(rng: &mut ChaCha8Rng) -> f64 {
    let sched = NoiseSchedule::linear(0.1, 3.0, 1.0).expect("valid schedule");
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let rates: Vec<_> = (0..2).map(|_| random_rate(rng, 3, 3.0)).collect();
        let terminal = random_product(rng, 2, 3);
        let x0 = [rng.random_range(0..3), rng.random_range(0..3)];
        let Ok(fact) = kl_term(&x0, &rates, &sched, &terminal) else { return f64::INFINITY };
        worst = worst.max((fact - oracle::joint_kl_term(&x0, &rates, &sched, &terminal)).abs());
    }
    worst
}

fn oracle_loss(rng: &mut ChaCha8Rng) -> f64 {
    let sched = NoiseSchedule::linear(0.1, 3.0, 1.0).expect("valid schedule");
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let (d, n) = (2, 5);
        let mu = random_product(rng, d, n);
        let rates: Vec<_> = (0..d).map(|_| random_rate(rng, n, 2.0)).collect();
        let mut data = StateBatch::new(d);
        let mut row = vec![0; d];
        for _ in 0..32 {
            mu.sample_into(rng, &mut row);
            data.push(&row).expect("matching shape");
        }
        let Ok(batch) = ScoreBatch::sample(&data, &rates, &sched, 32, 1e-3, rng) else { return f64::INFINITY };
        let source = ExactScoreOracle { mu: mu.clone(), rates: rates.clone(), schedule: sched };
        match score_entropy_loss(&source, &batch, &rates, &sched, RatioTarget::Marginal(&mu)) {
            Ok(loss) => worst = worst.max(loss.abs()),
            Err(_) => return f64::INFINITY,
        }
    }
    worst
}

/// Runs every check with a fixed seed.
pub fn run() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e1f);
    vec![
        Check { name: "kernel matches dense exponential", worst: kernel_vs_expm(&mut rng), threshold: 1e-8 },
        Check { name: "bridge round trip", worst: bridge_round_trip(&mut rng), threshold: 1e-9 },
        Check { name: "mass conservation", worst: conservation(&mut rng), threshold: 1e-12 },
        Check { name: "KL factorization", worst: kl_factorization(&mut rng), threshold: 1e-12 },
        Check { name: "oracle ratio loss", worst: oracle_loss(&mut rng), threshold: 1e-10 },
    ]
}
