use serde::{Deserialize, Serialize};

use crate::error::{EmpError, Result};

/// Optimization recipe. Unknown keys in a config file are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub final_lr: f64,
    pub warmup_epochs: usize,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub huber_delta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Scenes per forward/backward graph; a batch is split into chunks of
    /// this size which may run on different threads.
    pub micro_batch: usize,
    /// Run validation every this many epochs (and always after the last).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 96,
            peak_lr: 1e-3,
            final_lr: 1e-4,
            warmup_epochs: 10,
            weight_decay: 1e-4,
            clip_norm: 1.0,
            huber_delta: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            micro_batch: 16,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(EmpError::Config(m.to_string()));
        if self.epochs == 0 || self.batch_size == 0 || self.micro_batch == 0 || self.eval_every == 0 {
            return fail("epochs, batch_size, micro_batch and eval_every must be positive");
        }
        if self.warmup_epochs >= self.epochs {
            return fail("warmup_epochs must be smaller than epochs");
        }
        if !(self.peak_lr > self.final_lr && self.final_lr > 0.0) {
            return fail("need peak_lr > final_lr > 0");
        }
        if !(self.weight_decay >= 0.0 && self.clip_norm > 0.0 && self.huber_delta > 0.0 && self.eps > 0.0) {
            return fail("weight_decay must be non-negative; clip_norm, huber_delta and eps positive");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return fail("betas must lie in [0, 1)");
        }
        Ok(())
    }
}
