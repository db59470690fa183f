//! A multilayer perceptron producing positive ratio estimates.
//!
//! Input: one-hot `x_t` per dimension followed by a sinusoidal embedding of
//! `t / T`. Hidden layers use SiLU. The `d * n` raw outputs are clamped to
//! `[-RAW_LIMIT, RAW_LIMIT]` and exponentiated, so every ratio is positive
//! and finite. The last layer starts at zero, i.e. every ratio starts at 1.
//!
//! Parameters live in one flat buffer, layer by layer, each as an
//! `in x out` weight block (input-major) followed by `out` biases.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::RatioSource;
use crate::{Error, Result};

pub const TIME_EMBEDDING_WIDTH: usize = 16;
const RAW_LIMIT: f64 = 40.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreModel {
    dims: usize,
    states: usize,
    horizon: f64,
    /// Layer sizes including input and output.
    widths: Vec<usize>,
    params: Vec<f64>,
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    /// `inputs[l]` feeds layer `l`; `pre[l]` is its affine output.
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    /// Raw outputs after clamping.
    pub raw: Vec<f64>,
    clamped: Vec<bool>,
}

fn silu(x: f64) -> f64 {
    x / (1.0 + libm::exp(-x))
}

fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + libm::exp(-x));
    s * (1.0 + x * (1.0 - s))
}

fn param_count(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl ScoreModel {
    pub fn new<R: Rng + ?Sized>(
        dims: usize,
        states: usize,
        hidden: &[usize],
        horizon: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if dims == 0 || states < 2 || hidden.contains(&0) {
            return Err(Error::domain("score model needs d >= 1, n >= 2 and nonzero widths"));
        }
        let mut widths = vec![dims * states + TIME_EMBEDDING_WIDTH];
        widths.extend_from_slice(hidden);
        widths.push(dims * states);
        let mut params = vec![0.0; param_count(&widths)];
        let mut offset = 0;
        let layers = widths.len() - 1;
        for (l, w) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            if l + 1 < layers {
                let bound = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
                for p in &mut params[offset..offset + fan_in * fan_out] {
                    *p = (2.0 * rng.random::<f64>() - 1.0) * bound;
                }
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(Self {
            dims,
            states,
            horizon,
            widths,
            params,
        })
    }

    pub fn from_parts(
        dims: usize,
        states: usize,
        hidden: &[usize],
        horizon: f64,
        params: Vec<f64>,
    ) -> Result<Self> {
        let mut widths = vec![dims * states + TIME_EMBEDDING_WIDTH];
        widths.extend_from_slice(hidden);
        widths.push(dims * states);
        if params.len() != param_count(&widths) {
            return Err(Error::shape(alloc::format!(
                "expected {} score parameters, got {}",
                param_count(&widths),
                params.len()
            )));
        }
        Ok(Self {
            dims,
            states,
            horizon,
            widths,
            params,
        })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn hidden_widths(&self) -> &[usize] {
        &self.widths[1..self.widths.len() - 1]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Offsets of the raw output layer's weights and biases in the flat buffer.
    pub fn output_layer_range(&self) -> core::ops::Range<usize> {
        let l = self.widths.len() - 2;
        let start: usize = self.widths[..=l]
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum();
        start..self.params.len()
    }

    fn encode(&self, xt: &[usize], t: f64) -> Result<Vec<f64>> {
        if xt.len() != self.dims {
            return Err(Error::shape("state tuple length differs from model dimension"));
        }
        let mut input = vec![0.0; self.widths[0]];
        for (dim, &s) in xt.iter().enumerate() {
            if s >= self.states {
                return Err(Error::domain("state outside the model's vocabulary"));
            }
            input[dim * self.states + s] = 1.0;
        }
        let tau = t / self.horizon;
        let base = self.dims * self.states;
        let half = TIME_EMBEDDING_WIDTH / 2;
        for k in 0..half {
            // Angular frequencies from pi/2 up to 32 pi, geometrically spaced.
            let freq = core::f64::consts::FRAC_PI_2 * libm::pow(64.0, k as f64 / (half - 1) as f64);
            input[base + 2 * k] = libm::sin(freq * tau);
            input[base + 2 * k + 1] = libm::cos(freq * tau);
        }
        Ok(input)
    }

    pub fn forward_cached(&self, xt: &[usize], t: f64, cache: &mut ForwardCache) -> Result<()> {
        let layers = self.widths.len() - 1;
        cache.inputs.clear();
        cache.pre.clear();
        let mut act = self.encode(xt, t)?;
        let mut offset = 0;
        for l in 0..layers {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let w = &self.params[offset..offset + fan_in * fan_out];
            let b = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            let mut z = b.to_vec();
            for (j, &x) in act.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                for (zr, wr) in z.iter_mut().zip(&w[j * fan_out..(j + 1) * fan_out]) {
                    *zr += x * wr;
                }
            }
            offset += fan_in * fan_out + fan_out;
            let next = if l + 1 < layers {
                z.iter().map(|&v| silu(v)).collect()
            } else {
                Vec::new()
            };
            cache.inputs.push(core::mem::replace(&mut act, next));
            cache.pre.push(z);
        }
        let out = cache.pre.last().expect("at least one layer");
        cache.clamped = out.iter().map(|v| v.abs() > RAW_LIMIT).collect();
        cache.raw = out.iter().map(|v| v.clamp(-RAW_LIMIT, RAW_LIMIT)).collect();
        Ok(())
    }

    /// Ratio estimates `exp(raw)`, dimension-major.
    pub fn forward(&self, xt: &[usize], t: f64) -> Result<Vec<f64>> {
        let mut cache = ForwardCache::default();
        self.forward_cached(xt, t, &mut cache)?;
        Ok(cache.raw.iter().map(|&z| libm::exp(z)).collect())
    }

    /// Accumulates `d loss / d params` into `grad` given `d loss / d raw`.
    pub fn backward(&self, cache: &ForwardCache, d_raw: &[f64], grad: &mut [f64]) {
        assert_eq!(grad.len(), self.params.len(), "gradient buffer size");
        let layers = self.widths.len() - 1;
        let mut delta: Vec<f64> = d_raw
            .iter()
            .zip(&cache.clamped)
            .map(|(&g, &c)| if c { 0.0 } else { g })
            .collect();
        let mut offset = self.params.len();
        for l in (0..layers).rev() {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            offset -= fan_in * fan_out + fan_out;
            let input = &cache.inputs[l];
            let (gw, gb) = grad[offset..offset + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
            for (b, d) in gb.iter_mut().zip(&delta) {
                *b += d;
            }
            for (j, &x) in input.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                for (g, d) in gw[j * fan_out..(j + 1) * fan_out].iter_mut().zip(&delta) {
                    *g += x * d;
                }
            }
            if l == 0 {
                break;
            }
            let w = &self.params[offset..offset + fan_in * fan_out];
            let pre = &cache.pre[l - 1];
            delta = (0..fan_in)
                .map(|j| {
                    let back: f64 = w[j * fan_out..(j + 1) * fan_out]
                        .iter()
                        .zip(&delta)
                        .map(|(w, d)| w * d)
                        .sum();
                    back * silu_grad(pre[j])
                })
                .collect();
        }
    }
}

impl RatioSource for ScoreModel {
    fn ratios(&self, xt: &[usize], t: f64) -> Result<Vec<f64>> {
        self.forward(xt, t)
    }
}
