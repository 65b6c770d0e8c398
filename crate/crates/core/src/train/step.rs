use rayon::prelude::*;

use crate::error::{GaitError, Result};
use crate::losses::{combined_loss, LossReport, LossWeights};
use crate::model::{backward_clip, forward_clip, forward_clip_cached, ForwardCache, ModelConfig, ModelParams};
use crate::scalar::Scalar;
use crate::tensor::FeatureMap;

use super::optimizer::{AdamHyper, AdamState};

/// Activations above this many scalars per batch are recomputed in the
/// backward pass instead of being held from the first forward.
const CACHE_BUDGET_SCALARS: usize = 64 << 20;

/// Inputs to one optimisation step.
#[derive(Debug, Clone)]
pub struct StepInput<'a, T> {
    pub clips: &'a [FeatureMap<T>],
    pub labels: &'a [usize],
    pub lr: f64,
    pub margin: f64,
    pub loss_weights: LossWeights,
    pub hyper: AdamHyper,
    pub min_gem_delta: f64,
}

fn activation_scalars(cfg: &ModelConfig, frames: usize) -> usize {
    let (h, w) = (cfg.input_height, cfg.input_width);
    let mut d = frames;
    let mut total = cfg.in_channels * d * h * w;
    for (b, &c) in cfg.stage_channels.iter().enumerate() {
        total += c * d * h * w;
        if cfg.ablation.use_msma && b + 1 == cfg.msma_after_block {
            d /= 3;
            total += c * d * h * w;
        }
    }
    total
}

/// Loss and parameter gradients for one batch, without updating anything.
pub fn batch_gradients<T: Scalar>(
    clips: &[FeatureMap<T>],
    labels: &[usize],
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    margin: f64,
    weights: LossWeights,
) -> Result<(LossReport, ModelParams<T>)> {
    let frames = clips.first().map_or(0, |c| c.frames());
    let keep = activation_scalars(cfg, frames) * clips.len() <= CACHE_BUDGET_SCALARS;
    let caches: Option<Vec<ForwardCache<T>>> = if keep {
        Some(clips.par_iter().map(|x| forward_clip_cached(x, params, cfg)).collect::<Result<_>>()?)
    } else {
        None
    };
    let outputs = match &caches {
        Some(c) => c.iter().map(|c| c.output.clone()).collect(),
        None => clips.par_iter().map(|x| forward_clip(x, params, cfg)).collect::<Result<Vec<_>>>()?,
    };
    let embeddings: Vec<_> = outputs.iter().map(|o| o.embedding.clone()).collect();
    let logits: Vec<_> = outputs.iter().map(|o| o.logits.clone()).collect();
    let (report, grads) = combined_loss(&embeddings, &logits, labels, T::lit(margin), weights, true)?;
    if !report.total.is_finite() {
        let culprit = embeddings
            .iter()
            .position(|e| !e.is_finite())
            .map(|i| format!("embedding of batch item {i}"))
            .or_else(|| logits.iter().position(|l| !l.is_finite()).map(|i| format!("logits of batch item {i}")))
            .or_else(|| params.first_non_finite())
            .unwrap_or_else(|| "loss".into());
        return Err(GaitError::NonFinite { tensor: culprit });
    }
    let grads = grads.expect("gradients requested");

    // Per-clip gradients are summed in batch order so the result does not
    // depend on how many worker threads ran.
    let per_clip = |i: usize| -> Result<ModelParams<T>> {
        let mut g = params.zeros_like();
        let owned;
        let cache = match &caches {
            Some(c) => &c[i],
            None => {
                owned = forward_clip_cached(&clips[i], params, cfg)?;
                &owned
            }
        };
        backward_clip(cache, params, cfg, &grads.embeddings[i], &grads.logits[i], &mut g);
        Ok(g)
    };
    let mut total = params.zeros_like();
    let chunk = rayon::current_num_threads().max(1);
    let idx: Vec<usize> = (0..clips.len()).collect();
    for part in idx.chunks(chunk) {
        let gs: Vec<ModelParams<T>> = part.par_iter().map(|&i| per_clip(i)).collect::<Result<_>>()?;
        for g in &gs {
            total.add_assign(g);
        }
    }
    Ok((report, total))
}

/// One forward/backward pass and Adam update at `input.lr`.
pub fn train_step<T: Scalar>(
    params: &mut ModelParams<T>,
    opt: &mut AdamState<T>,
    cfg: &ModelConfig,
    input: &StepInput<'_, T>,
) -> Result<LossReport> {
    let (report, grads) = batch_gradients(input.clips, input.labels, params, cfg, input.margin, input.loss_weights)?;
    if let Some(name) = grads.first_non_finite() {
        return Err(GaitError::NonFinite { tensor: format!("gradient of {name}") });
    }
    opt.update(params, &grads, input.lr, &input.hyper);
    // the power mean is only defined for a positive exponent
    let floor = T::lit(input.min_gem_delta);
    if params.head.gem_delta < floor {
        params.head.gem_delta = floor;
    }
    if let Some(name) = params.first_non_finite() {
        return Err(GaitError::NonFinite { tensor: name });
    }
    Ok(report)
}
