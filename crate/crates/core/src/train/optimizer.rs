use serde::{Deserialize, Serialize};

use crate::model::ModelParams;
use crate::scalar::Scalar;

use super::config::TrainConfig;

/// Adam first/second moments, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: ModelParams<T>,
    pub v: ModelParams<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
}

impl From<&TrainConfig> for AdamHyper {
    fn from(c: &TrainConfig) -> Self {
        Self { beta1: c.adam_beta1, beta2: c.adam_beta2, eps: c.adam_eps, weight_decay: c.weight_decay, grad_clip: c.grad_clip }
    }
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        Self { step: 0, m: params.zeros_like(), v: params.zeros_like() }
    }

    /// One bias-corrected Adam update. Weight decay is added to the gradient
    /// (L2 form); `grad_clip > 0` rescales the gradient to that global norm.
    pub fn update(&mut self, params: &mut ModelParams<T>, grads: &ModelParams<T>, lr: f64, h: &AdamHyper) {
        self.step += 1;
        let t = self.step as i32;
        let clip = if h.grad_clip > 0.0 {
            let norm = grads.tensors().iter().flat_map(|g| g.iter()).map(|g| g.as_f64() * g.as_f64()).sum::<f64>().sqrt();
            if norm > h.grad_clip {
                h.grad_clip / norm
            } else {
                1.0
            }
        } else {
            1.0
        };
        let (b1, b2) = (T::lit(h.beta1), T::lit(h.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - h.beta1), T::lit(1.0 - h.beta2));
        let step = T::lit(lr / (1.0 - h.beta1.powi(t)));
        let v_corr = T::lit(1.0 / (1.0 - h.beta2.powi(t)));
        let (eps, wd, clip) = (T::lit(h.eps), T::lit(h.weight_decay), T::lit(clip));
        let gs = grads.tensors();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, g), m), v) in params.tensors_mut().into_iter().zip(gs).zip(ms).zip(vs) {
            for i in 0..p.len() {
                let gi = g[i] * clip + wd * p[i];
                m[i] = b1 * m[i] + one_b1 * gi;
                v[i] = b2 * v[i] + one_b2 * gi * gi;
                p[i] -= step * m[i] / ((v[i] * v_corr).sqrt() + eps);
            }
        }
    }
}
