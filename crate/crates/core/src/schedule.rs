//! Noise schedules `sigma(t)` and their integrals `beta(t)`.

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    /// `sigma(t)` interpolates linearly from `sigma_min` at 0 to `sigma_max` at `T`.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub horizon: f64,
}

impl NoiseSchedule {
    pub fn linear(sigma_min: f64, sigma_max: f64, horizon: f64) -> Result<Self> {
        if !(sigma_min > 0.0 && sigma_min.is_finite()) {
            return Err(Error::domain("sigma_min must be positive"));
        }
        if !(sigma_max >= sigma_min && sigma_max.is_finite()) {
            return Err(Error::domain("sigma_max must be at least sigma_min"));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::domain("horizon must be positive"));
        }
        Ok(Self {
            kind: ScheduleKind::Linear,
            sigma_min,
            sigma_max,
            horizon,
        })
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::domain(alloc::format!(
                "time {t} outside [0, {}]",
                self.horizon
            )));
        }
        Ok(())
    }

    pub fn sigma(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(match self.kind {
            ScheduleKind::Linear => {
                self.sigma_min + (self.sigma_max - self.sigma_min) * t / self.horizon
            }
        })
    }

    /// `beta(t) = int_0^t sigma(s) ds`.
    pub fn beta(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(match self.kind {
            ScheduleKind::Linear => {
                self.sigma_min * t + (self.sigma_max - self.sigma_min) * t * t / (2.0 * self.horizon)
            }
        })
    }

    pub fn beta_end(&self) -> f64 {
        self.beta(self.horizon).expect("horizon is in range")
    }
}
