//! AdamW with decoupled weight decay.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::config_err;
use crate::{Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-4, weight_decay: 0.01, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(config_err!("lr must be positive, got {}", self.lr));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(config_err!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(config_err!("{name} must be in [0, 1), got {b}"));
            }
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(config_err!("eps must be positive, got {}", self.eps));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Real> AdamWState<T> {
    pub fn new(len: usize) -> Self {
        Self { m: alloc::vec![T::zero(); len], v: alloc::vec![T::zero(); len], step: 0 }
    }
}

/// `p ← p − lr·m̂/(√v̂ + eps) − lr·wd·p`, with bias-corrected moments.
pub fn adamw_step<T: Real>(params: &mut [T], grads: &[T], state: &mut AdamWState<T>, cfg: &AdamWConfig) {
    assert!(
        params.len() == grads.len() && params.len() == state.m.len() && params.len() == state.v.len(),
        "parameter, gradient and optimizer state lengths differ"
    );
    state.step += 1;
    let t = state.step as f64;
    let b1 = T::from_f64(cfg.beta1);
    let b2 = T::from_f64(cfg.beta2);
    let c1 = T::from_f64(1.0 / (1.0 - libm::pow(cfg.beta1, t)));
    let c2 = T::from_f64(1.0 / (1.0 - libm::pow(cfg.beta2, t)));
    let lr = T::from_f64(cfg.lr);
    let decay = T::from_f64(cfg.lr * cfg.weight_decay);
    let eps = T::from_f64(cfg.eps);
    let one = T::one();
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (one - b1) * g;
        state.v[i] = b2 * state.v[i] + (one - b2) * g * g;
        let m_hat = state.m[i] * c1;
        let v_hat = state.v[i] * c2;
        let p = params[i];
        params[i] = p - lr * m_hat / (v_hat.sqrt() + eps) - decay * p;
    }
}
