//! Adam with optional decoupled weight decay.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub steps: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, params: usize) -> Result<Self> {
        let c = config;
        let ok = c.lr >= 0.0
            && (0.0..1.0).contains(&c.beta1)
            && (0.0..1.0).contains(&c.beta2)
            && c.eps > 0.0
            && c.weight_decay >= 0.0;
        if !ok {
            return Err(Error::domain("invalid optimizer hyperparameters"));
        }
        Ok(Self {
            config,
            m: vec![0.0; params],
            v: vec![0.0; params],
            steps: 0,
        })
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::shape("optimizer state and parameter sizes differ"));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                context: "score gradient".into(),
            });
        }
        let c = self.config;
        self.steps += 1;
        let bias1 = 1.0 - libm::pow(c.beta1, self.steps as f64);
        let bias2 = 1.0 - libm::pow(c.beta2, self.steps as f64);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = c.beta1 * *m + (1.0 - c.beta1) * g;
            *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
            let update = (*m / bias1) / (libm::sqrt(*v / bias2) + c.eps);
            *p -= c.lr * (update + c.weight_decay * *p);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_the_sign() {
        let mut opt = Adam::new(AdamConfig { lr: 0.1, ..Default::default() }, 2).unwrap();
        let mut p = vec![1.0, -1.0];
        opt.step(&mut p, &[3.0, -0.5]).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-6 && (p[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn zero_lr_is_inert() {
        let mut opt = Adam::new(AdamConfig { lr: 0.0, ..Default::default() }, 3).unwrap();
        let mut p = vec![0.5, 1.5, -2.0];
        let before = p.clone();
        for _ in 0..10 {
            opt.step(&mut p, &[1.0, -2.0, 3.0]).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut opt = Adam::new(AdamConfig { lr: 0.05, ..Default::default() }, 2).unwrap();
        let mut p = vec![3.0, -2.0];
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 1.0), 2.0 * (p[1] + 0.5)];
            opt.step(&mut p, &g).unwrap();
        }
        assert!((p[0] - 1.0).abs() < 1e-3 && (p[1] + 0.5).abs() < 1e-3);
    }

    #[test]
    fn rejects_bad_config_and_nan_gradients() {
        assert!(Adam::new(AdamConfig { beta1: 1.0, ..Default::default() }, 1).is_err());
        let mut opt = Adam::new(AdamConfig::default(), 1).unwrap();
        assert!(opt.step(&mut [0.0], &[f64::NAN]).is_err());
    }
}
