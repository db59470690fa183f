//! Constructive bridging between categoricals.
//!
//! Sorting states by ascending `p_i / q_i` makes the cumulative ratios
//! `P_k / Q_k` (prefix sums of the sorted vectors) nondecreasing, ending at 1.
//! In cumulative coordinates the exponential of `H` is diagonal, so
//! `p = q exp(Q)` reduces to `P_k = Q_k D_k`, giving
//! `a_k = ln(P_{k+1}/Q_{k+1}) - ln(P_k/Q_k) >= 0`.

use alloc::vec;
use alloc::vec::Vec;

use crate::prob::{ProbVector, ProductDistribution};
use crate::rate::FactorizedRateMatrix;
use crate::states::StateBatch;
use crate::{Error, Result};

/// Additive smoothing applied to histogram frequencies.
pub const HISTOGRAM_SMOOTHING: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SortedPair {
    pub perm: Vec<usize>,
    pub p_sorted: Vec<f64>,
    pub q_sorted: Vec<f64>,
}

impl SortedPair {
    /// `P_k / Q_k` for every prefix with positive source mass, normalized so the last is 1.
    ///
    /// Prefixes consisting only of zero-support states yield `None`.
    pub fn cumulative_ratios(&self) -> Vec<Option<f64>> {
        let p_total: f64 = self.p_sorted.iter().sum();
        let q_total: f64 = self.q_sorted.iter().sum();
        let (mut pc, mut qc) = (0.0, 0.0);
        self.p_sorted
            .iter()
            .zip(&self.q_sorted)
            .map(|(p, q)| {
                pc += p;
                qc += q;
                (qc > 0.0).then(|| (pc / p_total) / (qc / q_total))
            })
            .collect()
    }
}

/// Orders states by ascending `p[i] / q[i]`, ties by index; states with
/// `p[i] = q[i] = 0` go first.
pub fn sort_permutation(p: &ProbVector, q: &ProbVector) -> Result<SortedPair> {
    if p.len() != q.len() {
        return Err(Error::shape("sort_permutation needs equal lengths"));
    }
    let n = p.len();
    let mut keys = Vec::with_capacity(n);
    for i in 0..n {
        let (pi, qi) = (p[i], q[i]);
        let key = if qi == 0.0 {
            if pi > 0.0 {
                return Err(Error::UnsolvableSupport { state: i });
            }
            (0u8, 0.0)
        } else {
            (1u8, pi / qi)
        };
        keys.push((key, i));
    }
    keys.sort_by(|(ka, ia), (kb, ib)| {
        ka.0.cmp(&kb.0)
            .then(ka.1.total_cmp(&kb.1))
            .then(ia.cmp(ib))
    });
    let perm: Vec<usize> = keys.into_iter().map(|(_, i)| i).collect();
    Ok(SortedPair {
        p_sorted: perm.iter().map(|&i| p[i]).collect(),
        q_sorted: perm.iter().map(|&i| q[i]).collect(),
        perm,
    })
}

/// The unique factorized `Q` (for the sorted permutation) with `p = q exp(Q)`.
pub fn exact_rate_matrix(p: &ProbVector, q: &ProbVector) -> Result<FactorizedRateMatrix> {
    let pair = sort_permutation(p, q)?;
    let n = p.len();
    if n < 2 {
        return Err(Error::domain("bridging needs at least two states"));
    }
    let ratios = pair.cumulative_ratios();
    if ratios.iter().all(Option::is_none) {
        return Err(Error::DegeneratePrefix { position: n - 1 });
    }
    let mut log_ratio = vec![None; n];
    for (k, r) in ratios.iter().enumerate() {
        if let Some(r) = *r {
            if r <= 0.0 {
                return Err(Error::domain(alloc::format!(
                    "target mass vanishes on the sorted prefix ending at position {k}; \
                     reaching it needs an infinite rate"
                )));
            }
            log_ratio[k] = Some(libm::log(r));
        }
    }
    // The full prefix has ratio exactly 1.
    log_ratio[n - 1] = Some(0.0);
    let a = (0..n - 1)
        .map(|k| match (log_ratio[k], log_ratio[k + 1]) {
            (Some(lo), Some(hi)) => (hi - lo).max(0.0),
            _ => 0.0,
        })
        .collect();
    FactorizedRateMatrix::new(pair.perm, a)
}

/// Smoothed per-dimension histograms of a dataset.
pub fn estimate_marginals(dataset: &StateBatch, n: usize) -> Result<ProductDistribution> {
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let d = dataset.dims();
    let mut counts = vec![vec![0usize; n]; d];
    for row in dataset.rows() {
        for (dim, &s) in row.iter().enumerate() {
            if s >= n {
                return Err(Error::domain(alloc::format!(
                    "state {s} outside [0, {n})"
                )));
            }
            counts[dim][s] += 1;
        }
    }
    let total = dataset.len() as f64;
    let marginals = counts
        .into_iter()
        .map(|c| {
            ProbVector::normalized(
                c.into_iter()
                    .map(|k| k as f64 / total + HISTOGRAM_SMOOTHING)
                    .collect(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    ProductDistribution::new(marginals)
}

/// Per-dimension sorting permutations of `mu_hat` against `terminal`.
pub fn permutation_from_data(
    mu_hat: &ProductDistribution,
    terminal: &ProductDistribution,
) -> Result<Vec<Vec<usize>>> {
    if mu_hat.dims() != terminal.dims() || mu_hat.states() != terminal.states() {
        return Err(Error::shape("marginal estimate and terminal differ in shape"));
    }
    mu_hat
        .marginals()
        .iter()
        .zip(terminal.marginals())
        .map(|(m, t)| sort_permutation(m, t).map(|pair| pair.perm))
        .collect()
}
