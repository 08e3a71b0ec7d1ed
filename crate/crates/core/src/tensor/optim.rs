//! AdamW with decoupled weight decay and the cosine warm-restart schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Param, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.weight_decay.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid AdamW hyperparameters {self:?}")))
        }
    }
}

/// Moment buffers for a fixed list of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig, params: &[&Param<T>]) -> Result<Self> {
        config.validate()?;
        Ok(AdamW {
            config,
            step: 0,
            m: params.iter().map(|p| vec![T::zero(); p.value.len()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.value.len()]).collect(),
        })
    }

    /// One update with learning rate `lr`. Gradients are checked before any
    /// parameter is touched, so a failed step leaves everything unchanged.
    pub fn step(&mut self, params: &mut [&mut Param<T>], lr: f64) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        if params.len() != self.m.len() {
            return Err(Error::shape("optimizer parameter count", &[params.len()], &[self.m.len()]));
        }
        for (p, m) in params.iter().zip(&self.m) {
            if p.value.len() != m.len() || p.grad.shape != p.value.shape {
                return Err(Error::shape(format!("optimizer state for {}", p.name), &p.value.shape, &[m.len()]));
            }
            if !p.grad.all_finite() {
                return Err(Error::Numeric(format!("non-finite gradient in parameter {}", p.name)));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::of_f64(c.beta1), T::of_f64(c.beta2));
        let (one_b1, one_b2) = (T::of_f64(1.0 - c.beta1), T::of_f64(1.0 - c.beta2));
        let step_size = T::of_f64(lr / bc1);
        let inv_bc2 = T::of_f64(1.0 / bc2);
        let eps = T::of_f64(c.eps);
        let decay = T::of_f64(1.0 - lr * c.weight_decay);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let Param { value, grad, .. } = &mut **p;
            for (((w, &g), mi), vi) in value.data.iter_mut().zip(&grad.data).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + one_b1 * g;
                *vi = b2 * *vi + one_b2 * g * g;
                let denom = (*vi * inv_bc2).sqrt() + eps;
                *w = *w * decay - step_size * *mi / denom;
            }
        }
        Ok(())
    }
}

/// Cosine annealing with warm restarts, evaluated at a (possibly
/// fractional) epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LrSchedule {
    pub lr_max: f64,
    pub lr_min: f64,
    pub t0: f64,
    pub t_mult: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            lr_max: 1e-3,
            lr_min: 1e-6,
            t0: 50.0,
            t_mult: 2.0,
        }
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr_min >= 0.0 && self.lr_max > 0.0 && self.lr_min <= self.lr_max && self.lr_max.is_finite() && self.t0 > 0.0 && self.t_mult >= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid learning-rate schedule {self:?}")))
        }
    }

    /// Returns (position within the cycle, cycle length).
    pub fn cycle(&self, epoch: f64) -> (f64, f64) {
        let epoch = epoch.max(0.0);
        if self.t_mult == 1.0 {
            return (epoch % self.t0, self.t0);
        }
        // number of completed cycles from the geometric series
        let n = ((epoch / self.t0 * (self.t_mult - 1.0) + 1.0).ln() / self.t_mult.ln()).floor();
        let mut start = self.t0 * (self.t_mult.powf(n) - 1.0) / (self.t_mult - 1.0);
        let mut len = self.t0 * self.t_mult.powf(n);
        // guard the floor against rounding at exact restart points
        if epoch < start {
            len /= self.t_mult;
            start -= len;
        } else if epoch >= start + len {
            start += len;
            len *= self.t_mult;
        }
        (epoch - start, len)
    }

    pub fn lr(&self, epoch: f64) -> f64 {
        let (t_cur, t_i) = self.cycle(epoch);
        let lr = self.lr_min + 0.5 * (self.lr_max - self.lr_min) * (1.0 + (std::f64::consts::PI * t_cur / t_i).cos());
        lr.clamp(self.lr_min, self.lr_max)
    }
}
