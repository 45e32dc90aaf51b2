use serde::{Deserialize, Serialize};

use super::NetParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Multiplicative learning-rate drop applied every `lr_step_size` steps.
    pub lr_gamma: f64,
    pub lr_step_size: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            base_lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
            lr_gamma: 0.9,
            lr_step_size: 250,
        }
    }
}

impl AdamConfig {
    pub fn lr_at(&self, step: usize) -> f64 {
        self.base_lr * self.lr_gamma.powi((step / self.lr_step_size.max(1)) as i32)
    }
}

/// `1e-4 * 0.9^floor(step / 250)`.
pub fn lr_schedule(step: usize) -> f64 {
    AdamConfig::default().lr_at(step)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: NetParams,
    pub v: NetParams,
    /// Number of completed steps.
    pub t: usize,
}

impl AdamState {
    pub fn new(params: &NetParams, config: AdamConfig) -> Self {
        AdamState {
            config,
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    /// Learning rate the next step will use.
    pub fn current_lr(&self) -> f64 {
        self.config.lr_at(self.t)
    }

    /// Decoupled weight decay followed by the bias-corrected Adam update.
    /// Parameters and state are left untouched if any gradient is not finite.
    pub fn step(&mut self, params: &mut NetParams, grads: &NetParams) -> Result<()> {
        if params.tensors.len() != grads.tensors.len()
            || params
                .tensors
                .iter()
                .zip(&grads.tensors)
                .any(|(p, g)| p.len() != g.len())
        {
            return Err(Error::Shape("gradient shapes differ from parameters".into()));
        }
        if let Some(i) = grads.tensors.iter().position(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFiniteGradient { tensor: i });
        }
        let c = self.config;
        let lr = c.lr_at(self.t);
        self.t += 1;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for (k, g) in grads.tensors.iter().enumerate() {
            let p = &mut params.tensors[k];
            let m = &mut self.m.tensors[k];
            let v = &mut self.v.tensors[k];
            for i in 0..g.len() {
                p[i] -= lr * c.weight_decay * p[i];
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}
