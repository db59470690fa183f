//! Categorical distributions over `n` states and their products.

use alloc::vec::Vec;
use core::ops::Index;

use rand::Rng;

use crate::{Error, Result, PROB_FLOOR};

/// Tolerance on the total mass of a [`ProbVector`].
pub const SUM_TOL: f64 = 1e-9;

/// A categorical distribution: nonnegative entries summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector {
    probs: Vec<f64>,
}

impl ProbVector {
    /// Validates `probs` as given. Negative, non-finite or mis-normalized input is rejected.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Empty("probability vector"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::domain("probabilities must be finite and nonnegative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(Error::domain(alloc::format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        Ok(Self { probs })
    }

    /// Clamps negatives to zero and rescales to unit mass.
    pub fn normalized(mut probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Empty("probability vector"));
        }
        for p in probs.iter_mut() {
            if !p.is_finite() {
                return Err(Error::NonFinite {
                    context: "probability vector".into(),
                });
            }
            if *p < 0.0 {
                *p = 0.0;
            }
        }
        let total: f64 = probs.iter().sum();
        if total <= 0.0 {
            return Err(Error::domain("probability vector has no mass"));
        }
        probs.iter_mut().for_each(|p| *p /= total);
        Ok(Self { probs })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Empty("probability vector"));
        }
        Ok(Self {
            probs: alloc::vec![1.0 / n as f64; n],
        })
    }

    pub fn point_mass(n: usize, state: usize) -> Result<Self> {
        if state >= n {
            return Err(Error::domain("point mass outside the state space"));
        }
        let mut probs = alloc::vec![0.0; n];
        probs[state] = 1.0;
        Ok(Self { probs })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }

    pub fn entropy(&self) -> f64 {
        entropy(&self.probs)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_categorical(&self.probs, rng)
    }
}

impl Index<usize> for ProbVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.probs[i]
    }
}

/// `d` independent categorical marginals sharing one state count.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductDistribution {
    marginals: Vec<ProbVector>,
}

impl ProductDistribution {
    pub fn new(marginals: Vec<ProbVector>) -> Result<Self> {
        let first = marginals.first().ok_or(Error::Empty("product distribution"))?;
        let n = first.len();
        if marginals.iter().any(|m| m.len() != n) {
            return Err(Error::shape("marginals must share the state count"));
        }
        Ok(Self { marginals })
    }

    pub fn uniform(d: usize, n: usize) -> Result<Self> {
        Self::new((0..d).map(|_| ProbVector::uniform(n)).collect::<Result<_>>()?)
    }

    /// Number of dimensions `d`.
    pub fn dims(&self) -> usize {
        self.marginals.len()
    }

    /// State count `n`.
    pub fn states(&self) -> usize {
        self.marginals[0].len()
    }

    pub fn marginal(&self, dim: usize) -> &ProbVector {
        &self.marginals[dim]
    }

    pub fn marginals(&self) -> &[ProbVector] {
        &self.marginals
    }

    pub fn entropy(&self) -> f64 {
        self.marginals.iter().map(ProbVector::entropy).sum()
    }

    /// Probability of a full `d`-tuple under the product.
    pub fn prob_of(&self, x: &[usize]) -> f64 {
        self.marginals.iter().zip(x).map(|(m, &s)| m[s]).product()
    }

    /// Sum of per-dimension `KL(self_i || other_i)`, i.e. the KL of the products.
    pub fn kl_to(&self, other: &ProductDistribution) -> Result<f64> {
        if self.dims() != other.dims() || self.states() != other.states() {
            return Err(Error::shape("product distributions differ in shape"));
        }
        Ok(self
            .marginals
            .iter()
            .zip(&other.marginals)
            .map(|(p, q)| kl_divergence(p.as_slice(), q.as_slice()))
            .sum())
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [usize]) {
        for (slot, m) in out.iter_mut().zip(&self.marginals) {
            *slot = m.sample(rng);
        }
    }
}

/// `KL(p || q)` in nats with `0 ln 0 = 0`; `q` is floored at [`PROB_FLOOR`].
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(&pi, &qi)| pi * (libm::log(pi) - libm::log(qi.max(PROB_FLOOR))))
        .sum()
}

/// Total variation distance `0.5 * sum |p_i - q_i|`.
pub fn tv_distance(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::shape("tv_distance needs equal lengths"));
    }
    Ok(0.5
        * p.as_slice()
            .iter()
            .zip(q.as_slice())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>())
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|pi| **pi > 0.0)
        .map(|&pi| pi * libm::log(pi))
        .sum::<f64>()
}

/// Inverse-CDF draw from unnormalized nonnegative weights.
///
/// Falls back to the last positive entry when rounding leaves `u` past the total.
pub fn sample_categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}
