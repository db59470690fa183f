//! Factorized rate matrices `Q = A H A^-1`.
//!
//! `H` is upper triangular with zero row sums: row `k` carries `a[j-1]` in
//! every column `j > k` and `-sum_{m >= k} a[m]` on the diagonal; the last
//! row is zero. It diagonalizes as `H = U diag(lambda) U^-1` with `U` the
//! all-ones upper-triangular matrix and `lambda_k = -sum_{m >= k} a[m]`, so
//!
//! ```text
//! exp(beta H)[i][j] = D_i                  j == i
//!                   = D_j - D_{j-1}        j >  i
//!                   = 0                    j <  i
//! ```
//!
//! with `D_k = exp(beta * lambda_k)`. `D_j - D_{j-1}` equals
//! `D_{j-1} * expm1(beta * a[j-1])`, which is how it is evaluated to avoid
//! cancellation.
//!
//! The permutation is stored as an index map: sorted position `k` holds the
//! original state `perm[k]`, so `Q[x][y] = H[inv_perm[x]][inv_perm[y]]`.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::Matrix;
use crate::prob::ProbVector;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedRateMatrix {
    perm: Vec<usize>,
    inv_perm: Vec<usize>,
    a: Vec<f64>,
}

fn invert_permutation(perm: &[usize]) -> Result<Vec<usize>> {
    let n = perm.len();
    let mut inv = vec![usize::MAX; n];
    for (k, &s) in perm.iter().enumerate() {
        if s >= n || inv[s] != usize::MAX {
            return Err(Error::domain("not a permutation"));
        }
        inv[s] = k;
    }
    Ok(inv)
}

fn check_params(a: &[f64]) -> Result<()> {
    if a.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::domain("rate parameters must be finite and nonnegative"));
    }
    Ok(())
}

impl FactorizedRateMatrix {
    pub fn new(perm: Vec<usize>, a: Vec<f64>) -> Result<Self> {
        let n = perm.len();
        if n < 2 {
            return Err(Error::domain("rate matrices need at least two states"));
        }
        if a.len() != n - 1 {
            return Err(Error::shape(alloc::format!(
                "expected {} rate parameters, got {}",
                n - 1,
                a.len()
            )));
        }
        check_params(&a)?;
        let inv_perm = invert_permutation(&perm)?;
        Ok(Self { perm, inv_perm, a })
    }

    pub fn with_identity(a: Vec<f64>) -> Result<Self> {
        Self::new((0..a.len() + 1).collect(), a)
    }

    /// `Q = 0`.
    pub fn zero(n: usize) -> Result<Self> {
        Self::with_identity(vec![0.0; n.saturating_sub(1)])
    }

    /// Every sorted state leaks only into the last sorted state at unit rate.
    pub fn absorbing(n: usize) -> Result<Self> {
        let mut a = vec![0.0; n.saturating_sub(1)];
        if let Some(last) = a.last_mut() {
            *last = 1.0;
        }
        Self::with_identity(a)
    }

    pub fn uniform_small(n: usize, value: f64) -> Result<Self> {
        Self::with_identity(vec![value; n.saturating_sub(1)])
    }

    pub fn n(&self) -> usize {
        self.perm.len()
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn inv_perm(&self) -> &[usize] {
        &self.inv_perm
    }

    pub fn params(&self) -> &[f64] {
        &self.a
    }

    pub fn set_params(&mut self, a: Vec<f64>) -> Result<()> {
        if a.len() != self.a.len() {
            return Err(Error::shape("rate parameter count is fixed"));
        }
        check_params(&a)?;
        self.a = a;
        Ok(())
    }

    pub fn set_perm(&mut self, perm: Vec<usize>) -> Result<()> {
        if perm.len() != self.n() {
            return Err(Error::shape("permutation length differs from state count"));
        }
        self.inv_perm = invert_permutation(&perm)?;
        self.perm = perm;
        Ok(())
    }

    /// Eigenvalues of `H` in sorted order; the last one is always 0.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let n = self.n();
        let mut lambda = vec![0.0; n];
        let mut acc = 0.0;
        for k in (0..n - 1).rev() {
            acc += self.a[k];
            lambda[k] = -acc;
        }
        lambda
    }

    /// `D_k = exp(beta * lambda_k)`, the diagonal of `exp(beta Lambda)`.
    pub fn spectral_decays(&self, beta: f64) -> Vec<f64> {
        self.eigenvalues()
            .into_iter()
            .map(|l| libm::exp(beta * l))
            .collect()
    }

    /// Dense entry `Q[x][y]`.
    pub fn rate(&self, x: usize, y: usize) -> f64 {
        let (i, j) = (self.inv_perm[x], self.inv_perm[y]);
        if j > i {
            self.a[j - 1]
        } else if j == i {
            -self.a[i..].iter().sum::<f64>()
        } else {
            0.0
        }
    }

    /// `Q[y][x]` for every `y != x` feeds into state `x` at the same rate
    /// `a[inv_perm[x] - 1]`, but only from states sorted before `x`.
    pub fn inflow_rate(&self, y: usize, x: usize) -> f64 {
        if y == x {
            return 0.0;
        }
        let (i, j) = (self.inv_perm[y], self.inv_perm[x]);
        if j > i {
            self.a[j - 1]
        } else {
            0.0
        }
    }

    pub fn materialize_dense(&self) -> Matrix {
        let n = self.n();
        let mut q = Matrix::zeros(n, n);
        for x in 0..n {
            for y in 0..n {
                q[(x, y)] = self.rate(x, y);
            }
        }
        q
    }

    /// Row `i` of `exp(beta H)` in sorted coordinates, without clamping.
    pub fn sorted_kernel_row_raw(&self, i: usize, beta: f64, decays: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut row = vec![0.0; n];
        row[i] = decays[i];
        for j in i + 1..n {
            let step = beta * self.a[j - 1];
            row[j] = if step < 1.0 {
                decays[j - 1] * libm::expm1(step)
            } else {
                decays[j] - decays[j - 1]
            };
        }
        row
    }

    /// Row `x` of `exp(beta Q)` in original coordinates, clamped at zero and renormalized.
    pub fn kernel_row(&self, x: usize, beta: f64) -> Vec<f64> {
        let decays = self.spectral_decays(beta);
        self.kernel_row_with(x, beta, &decays)
    }

    pub(crate) fn kernel_row_with(&self, x: usize, beta: f64, decays: &[f64]) -> Vec<f64> {
        let sorted = self.sorted_kernel_row_raw(self.inv_perm[x], beta, decays);
        let mut row = vec![0.0; self.n()];
        for (k, v) in sorted.into_iter().enumerate() {
            row[self.perm[k]] = v.max(0.0);
        }
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= total);
        row
    }

    /// `exp(beta Q) = (A U) exp(beta Lambda) (A U)^-1`, row-stochastic.
    pub fn transition_kernel(&self, beta: f64) -> Result<Matrix> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::domain("beta must be finite and nonnegative"));
        }
        let n = self.n();
        let decays = self.spectral_decays(beta);
        let mut k = Matrix::zeros(n, n);
        for x in 0..n {
            let row = self.kernel_row_with(x, beta, &decays);
            k.row_mut(x).copy_from_slice(&row);
        }
        Ok(k)
    }

    /// `p exp(beta Q)` for any real row vector, normalized or not.
    pub fn evolve_slice(&self, p: &[f64], beta: f64) -> Result<Vec<f64>> {
        if p.len() != self.n() {
            return Err(Error::shape("vector length differs from state count"));
        }
        Ok(self.transition_kernel(beta)?.vecmul(p))
    }

    /// `p exp(beta Q)` in O(n) through cumulative coordinates.
    ///
    /// With `P` the prefix sums of `p` in sorted order, the result in sorted
    /// order is `D_k p_k + P_{k-1} (D_k - D_{k-1})`, both terms nonnegative
    /// for nonnegative `p`.
    pub fn evolve_cumulative(&self, p: &[f64], beta: f64, decays: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut out = vec![0.0; n];
        let mut prefix = 0.0;
        for k in 0..n {
            let pk = p[self.perm[k]];
            let mut v = decays[k] * pk;
            if k > 0 {
                let step = beta * self.a[k - 1];
                let gap = if step < 1.0 {
                    decays[k - 1] * libm::expm1(step)
                } else {
                    decays[k] - decays[k - 1]
                };
                v += prefix * gap;
            }
            out[self.perm[k]] = v;
            prefix += pk;
        }
        out
    }

    pub fn evolve(&self, p0: &ProbVector, beta: f64) -> Result<ProbVector> {
        ProbVector::normalized(self.evolve_slice(p0.as_slice(), beta)?)
    }

    /// Row `x` of the reverse-time generator `sigma_t Q[y][x] ratio[y]`.
    ///
    /// `p_ratio[y]` approximates `p_t(y) / p_t(x)`; the diagonal closes the row.
    pub fn reverse_rate_row(&self, sigma_t: f64, p_ratio: &[f64], x: usize) -> Result<Vec<f64>> {
        let n = self.n();
        if p_ratio.len() != n {
            return Err(Error::shape("ratio vector length differs from state count"));
        }
        let mut row = vec![0.0; n];
        let mut total = 0.0;
        for y in 0..n {
            if y == x {
                continue;
            }
            if !(p_ratio[y] >= 0.0) || !p_ratio[y].is_finite() {
                return Err(Error::Invariant(alloc::format!(
                    "ratio for state {y} is {}",
                    p_ratio[y]
                )));
            }
            let rate = self.inflow_rate(y, x);
            if rate == 0.0 {
                continue;
            }
            let v = sigma_t * rate * p_ratio[y];
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Invariant(alloc::format!(
                    "reverse rate {x}->{y} is {v}"
                )));
            }
            row[y] = v;
            total += v;
        }
        row[x] = -total;
        Ok(row)
    }
}
