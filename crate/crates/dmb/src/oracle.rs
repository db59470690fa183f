//! Slow reference computations that share no code path with the closed forms.

use dmb_core::linalg::Matrix;
use dmb_core::{FactorizedRateMatrix, NoiseSchedule, ProductDistribution};

fn norm_inf(m: &Matrix) -> f64 {
    (0..m.rows())
        .map(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `exp(beta Q)` by scaling and squaring a truncated Taylor series.
pub fn expm(q: &Matrix, beta: f64) -> Matrix {
    let a = q.scaled(beta);
    let norm = norm_inf(&a);
    // Scale so the series argument has norm at most 1/2.
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as u32 } else { 0 };
    let a = a.scaled(0.5f64.powi(squarings as i32));
    let n = a.rows();
    let mut sum = Matrix::identity(n);
    let mut term = Matrix::identity(n);
    for k in 1..=30 {
        term = term.matmul(&a).scaled(1.0 / k as f64);
        let small = norm_inf(&term) < 1e-18;
        for i in 0..n {
            for (s, t) in sum.row_mut(i).iter_mut().zip(term.row(i)) {
                *s += t;
            }
        }
        if small {
            break;
        }
    }
    for _ in 0..squarings {
        sum = sum.matmul(&sum);
    }
    sum
}

/// Dense kernel of a factorized rate matrix through [`expm`].
pub fn dense_kernel(q: &FactorizedRateMatrix, beta: f64) -> Matrix {
    expm(&q.materialize_dense(), beta)
}

/// `KL(p_{T|0}(. | x0) || terminal)` summed over every joint state.
///
/// Cost is `n^d`; intended for tiny shapes only.
pub fn joint_kl_term(
    x0: &[usize],
    rates: &[FactorizedRateMatrix],
    schedule: &NoiseSchedule,
    terminal: &ProductDistribution,
) -> f64 {
    let beta = schedule.beta_end();
    let kernels: Vec<Matrix> = rates.iter().map(|q| dense_kernel(q, beta)).collect();
    let n = terminal.states();
    let d = x0.len();
    let mut state = vec![0usize; d];
    let mut total = 0.0;
    loop {
        let p: f64 = (0..d).map(|i| kernels[i][(x0[i], state[i])]).product();
        if p > 0.0 {
            total += p * (p / terminal.prob_of(&state)).ln();
        }
        // Odometer increment over `n^d` states.
        let mut i = 0;
        while i < d {
            state[i] += 1;
            if state[i] < n {
                break;
            }
            state[i] = 0;
            i += 1;
        }
        if i == d {
            return total;
        }
    }
}
