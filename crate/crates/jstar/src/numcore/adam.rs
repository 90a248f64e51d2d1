//! Adam parameter updates.

use serde::{Deserialize, Serialize};

use super::{NumError, ParamSet, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 3e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam state: one pair of moment buffers per parameter, in registration
/// order. Updates are in-place and clear gradients afterwards.
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        let m = params.entries().map(|(_, e)| vec![0.0; e.value.numel()]).collect();
        let v = params.entries().map(|(_, e)| vec![0.0; e.value.numel()]).collect();
        Adam { config, step: 0, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam update over every parameter. Requires every parameter to have
    /// an accumulated gradient; zeroes gradients when done.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        for (id, e) in params.entries() {
            if e.grad.is_none() {
                return Err(NumError::MissingGrad(params.name(id).to_string()));
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let c = self.config;
        let bias1 = 1.0 - (c.beta1 as f64).powf(t);
        let bias2 = 1.0 - (c.beta2 as f64).powf(t);
        for id in 0..params.len() {
            let grad = params.grad(id).unwrap().to_vec();
            let m = &mut self.m[id];
            let v = &mut self.v[id];
            let value = params.value_mut(id).data_mut();
            for i in 0..grad.len() {
                let g = grad[i];
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
                let mhat = m[i] as f64 / bias1;
                let vhat = v[i] as f64 / bias2;
                value[i] -= (c.lr as f64 * mhat / (vhat.sqrt() + c.eps as f64)) as f32;
            }
        }
        params.zero_grads();
        Ok(())
    }
}
