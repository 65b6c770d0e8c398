use serde::{Deserialize, Serialize};

use crate::error::{GaitError, Result};
use crate::losses::LossWeights;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn as_str(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

/// Optimisation hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: u64,
    pub base_lr: f64,
    pub decay_at: u64,
    pub decayed_lr: f64,
    pub margin: f64,
    /// Subjects per batch.
    pub p: usize,
    /// Sequences per subject.
    pub k: usize,
    /// Frames per training clip.
    pub frames: usize,
    pub seed: u64,
    /// Write a numbered checkpoint every this many iterations; 0 disables.
    pub checkpoint_every: u64,
    pub log_every: u64,
    pub loss_weights: LossWeights,
    pub weight_decay: f64,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Smallest value the GeM exponent may take after an update.
    pub min_gem_delta: f64,
    pub precision: Precision,
    /// Batches prepared ahead of the optimiser.
    pub prefetch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 80_000,
            base_lr: 1e-4,
            decay_at: 70_000,
            decayed_lr: 1e-5,
            margin: 0.2,
            p: 8,
            k: 8,
            frames: 30,
            seed: 0,
            checkpoint_every: 10_000,
            log_every: 100,
            loss_weights: LossWeights::default(),
            weight_decay: 0.0,
            grad_clip: 0.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            min_gem_delta: 1e-3,
            precision: Precision::F32,
            prefetch: 2,
        }
    }
}

impl TrainConfig {
    /// Short schedule for CPU runs on generated walkers.
    pub fn desk() -> Self {
        Self {
            iterations: 300,
            base_lr: 1e-3,
            decay_at: 250,
            decayed_lr: 1e-4,
            p: 4,
            k: 4,
            frames: 24,
            checkpoint_every: 100,
            log_every: 25,
            ..Self::default()
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, rate) in [("base_lr", self.base_lr), ("decayed_lr", self.decayed_lr)] {
            if !(rate > 0.0 && rate.is_finite()) {
                v.push(format!("{name} must be positive, got {rate}"));
            }
        }
        if !(self.margin >= 0.0) {
            v.push(format!("margin must be non-negative, got {}", self.margin));
        }
        if self.p < 2 {
            v.push(format!("p must be at least 2 for triplets, got {}", self.p));
        }
        if self.k < 2 {
            v.push(format!("k must be at least 2 for triplets, got {}", self.k));
        }
        if self.frames == 0 {
            v.push("frames must be positive".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            v.push("Adam betas must lie in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0) {
            v.push("adam_eps must be positive".into());
        }
        if self.weight_decay < 0.0 || self.grad_clip < 0.0 {
            v.push("weight_decay and grad_clip must be non-negative".into());
        }
        if !(self.min_gem_delta > 0.0) {
            v.push("min_gem_delta must be positive".into());
        }
        if self.loss_weights.triplet < 0.0 || self.loss_weights.cross_entropy < 0.0 {
            v.push("loss weights must be non-negative".into());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(GaitError::ConfigInvariants(v))
        }
    }
}

/// Step learning-rate schedule: `base_lr` before `decay_at`, `decayed_lr` from then on.
pub fn lr_schedule(iteration: u64, cfg: &TrainConfig) -> f64 {
    if iteration < cfg.decay_at {
        cfg.base_lr
    } else {
        cfg.decayed_lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_boundaries() {
        let c = TrainConfig::default();
        assert_eq!(lr_schedule(0, &c), 1e-4);
        assert_eq!(lr_schedule(69_999, &c), 1e-4);
        assert_eq!(lr_schedule(70_000, &c), 1e-5);
    }

    #[test]
    fn invalid_rates_listed() {
        let c = TrainConfig { base_lr: 0.0, p: 1, ..TrainConfig::default() };
        let v = c.violations();
        assert_eq!(v.len(), 2, "{v:?}");
    }
}
