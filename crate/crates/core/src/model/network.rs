//! Full forward/backward pass: stacked FFSL blocks, MSMA after block
//! `msma_after_block`, then TP → GeM → SeFC → per-strip classifiers.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::conv::Conv3dWeights;
use super::ffsl::{ffsl_backward, ffsl_forward, FfslParams, PartFilterBank};
use super::head::{
    classifier_backward, classifier_forward, gem_backward, gem_pool, sefc_backward, sefc_forward, temporal_pool,
    temporal_pool_backward, HeadParams, Linear,
};
use super::msma::{msma_backward, msma_forward, LmaParams, MsmaParams};
use crate::error::{GaitError, Result};
use crate::scalar::Scalar;
use crate::tensor::{FeatureMap, Matrix};

/// Every learnable scalar of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<T> {
    pub blocks: Vec<FfslParams<T>>,
    pub msma: Option<MsmaParams<T>>,
    pub head: HeadParams<T>,
}

/// Learnable-scalar counts grouped by module.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ParamCount {
    pub bme: usize,
    pub pme: usize,
    pub msma: usize,
    pub gem: usize,
    pub sefc: usize,
    pub classifier: usize,
    pub total: usize,
}

impl ParamCount {
    pub fn rows(&self) -> [(&'static str, usize); 7] {
        [
            ("bme", self.bme),
            ("pme", self.pme),
            ("msma", self.msma),
            ("gem", self.gem),
            ("sefc", self.sefc),
            ("classifier", self.classifier),
            ("total", self.total),
        ]
    }
}

impl<T: Scalar> ModelParams<T> {
    /// Randomly initialised weights; LMA mixes and the GeM exponent take
    /// their configured initial values.
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut blocks = Vec::with_capacity(cfg.num_ffsl_blocks);
        for b in 0..cfg.num_ffsl_blocks {
            let (cin, cout) = (cfg.block_in_channels(b), cfg.stage_channels[b]);
            let bme = Conv3dWeights::init(cout, cin, rng);
            let pme = cfg
                .ablation
                .use_pme
                .then(|| PartFilterBank::init(cfg.pme_mode, cfg.k_parts, cout, cin, rng));
            blocks.push(FfslParams { bme, pme });
        }
        let msma = cfg.ablation.use_msma.then(|| MsmaParams::init(cfg.l_parts, T::lit(cfg.lma_init)));
        let c = cfg.out_channels();
        let sefc_weights = (0..cfg.num_strips).map(|_| Linear::init(c, cfg.embed_dim, rng)).collect();
        let classifier_weights = (0..cfg.num_strips).map(|_| Linear::init(cfg.embed_dim, cfg.num_classes, rng)).collect();
        Ok(Self {
            blocks,
            msma,
            head: HeadParams { gem_delta: T::lit(cfg.gem_delta_init), sefc_weights, classifier_weights },
        })
    }

    /// Same structure as `cfg` describes, every scalar zero. Used for gradient buffers.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let blocks = (0..cfg.num_ffsl_blocks)
            .map(|b| {
                let (cin, cout) = (cfg.block_in_channels(b), cfg.stage_channels[b]);
                FfslParams {
                    bme: Conv3dWeights::zeros(cout, cin),
                    pme: cfg.ablation.use_pme.then(|| PartFilterBank::zeros(cfg.pme_mode, cfg.k_parts, cout, cin)),
                }
            })
            .collect();
        let c = cfg.out_channels();
        Self {
            blocks,
            msma: cfg.ablation.use_msma.then(|| MsmaParams::init(cfg.l_parts, T::zero())),
            head: HeadParams {
                gem_delta: T::zero(),
                sefc_weights: (0..cfg.num_strips).map(|_| Linear::zeros(c, cfg.embed_dim)).collect(),
                classifier_weights: (0..cfg.num_strips).map(|_| Linear::zeros(cfg.embed_dim, cfg.num_classes)).collect(),
            },
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(T::zero());
        }
        z
    }

    /// Named views of every parameter tensor, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &[T])> {
        let mut out: Vec<(String, &[T])> = Vec::new();
        for (b, block) in self.blocks.iter().enumerate() {
            out.push((format!("bme.{b}.kernel"), &block.bme.kernel));
            out.push((format!("bme.{b}.bias"), &block.bme.bias));
            if let Some(bank) = &block.pme {
                for (j, part) in bank.banks.iter().enumerate() {
                    for (i, t) in part.tensors().into_iter().enumerate() {
                        out.push((format!("pme.{b}.{j}.{i}"), t));
                    }
                }
            }
        }
        if let Some(m) = &self.msma {
            out.push(("msma.global.p1".into(), std::slice::from_ref(&m.global_lma.p1)));
            out.push(("msma.global.p2".into(), std::slice::from_ref(&m.global_lma.p2)));
            for (j, p) in m.part_lmas.iter().enumerate() {
                out.push((format!("msma.part.{j}.p1"), std::slice::from_ref(&p.p1)));
                out.push((format!("msma.part.{j}.p2"), std::slice::from_ref(&p.p2)));
            }
        }
        out.push(("gem.delta".into(), std::slice::from_ref(&self.head.gem_delta)));
        for (s, l) in self.head.sefc_weights.iter().enumerate() {
            out.push((format!("sefc.{s}.weight"), &l.weight));
            out.push((format!("sefc.{s}.bias"), &l.bias));
        }
        for (s, l) in self.head.classifier_weights.iter().enumerate() {
            out.push((format!("classifier.{s}.weight"), &l.weight));
            out.push((format!("classifier.{s}.bias"), &l.bias));
        }
        out
    }

    /// Mutable views in the same order as [`named_tensors`](Self::named_tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for block in &mut self.blocks {
            out.push(&mut block.bme.kernel);
            out.push(&mut block.bme.bias);
            if let Some(bank) = &mut block.pme {
                for part in &mut bank.banks {
                    out.extend(part.tensors_mut());
                }
            }
        }
        if let Some(m) = &mut self.msma {
            out.push(std::slice::from_mut(&mut m.global_lma.p1));
            out.push(std::slice::from_mut(&mut m.global_lma.p2));
            for p in &mut m.part_lmas {
                let LmaParams { p1, p2 } = p;
                out.push(std::slice::from_mut(p1));
                out.push(std::slice::from_mut(p2));
            }
        }
        out.push(std::slice::from_mut(&mut self.head.gem_delta));
        for l in self.head.sefc_weights.iter_mut().chain(self.head.classifier_weights.iter_mut()) {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }

    pub fn tensors(&self) -> Vec<&[T]> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }

    pub fn add_assign(&mut self, other: &Self) {
        let src = other.tensors();
        for (dst, src) in self.tensors_mut().into_iter().zip(src) {
            for (a, &b) in dst.iter_mut().zip(src) {
                *a += b;
            }
        }
    }

    /// Name of the first tensor holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<String> {
        self.named_tensors().into_iter().find(|(_, t)| t.iter().any(|v| !v.is_finite())).map(|(n, _)| n)
    }

    /// Checks that these parameters have exactly the structure `cfg` describes.
    pub fn check_matches(&self, cfg: &ModelConfig) -> Result<()> {
        let want = ModelParams::<T>::zeros(cfg);
        let shapes = |p: &ModelParams<T>| p.named_tensors().into_iter().map(|(n, t)| (n, t.len())).collect::<Vec<_>>();
        if shapes(self) != shapes(&want) {
            return Err(GaitError::Config("parameter tensors do not match the model configuration".into()));
        }
        Ok(())
    }
}

/// Exact learnable-scalar count, grouped by module.
pub fn count_parameters<T: Scalar>(params: &ModelParams<T>) -> ParamCount {
    let mut c = ParamCount::default();
    for (name, t) in params.named_tensors() {
        let slot = match name.split('.').next().unwrap_or_default() {
            "bme" => &mut c.bme,
            "pme" => &mut c.pme,
            "msma" => &mut c.msma,
            "gem" => &mut c.gem,
            "sefc" => &mut c.sefc,
            _ => &mut c.classifier,
        };
        *slot += t.len();
        c.total += t.len();
    }
    c
}

/// Per-clip network output.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipOutput<T> {
    /// `num_strips × embed_dim`
    pub embedding: Matrix<T>,
    /// `num_strips × num_classes`
    pub logits: Matrix<T>,
    /// Frame count entering the head (after MSMA when enabled).
    pub head_frames: usize,
}

/// Activations kept for the backward pass of one clip.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    input: FeatureMap<T>,
    block_outputs: Vec<FeatureMap<T>>,
    msma_output: Option<FeatureMap<T>>,
    tp_shape: [usize; 4],
    tp_argmax: Vec<u32>,
    pooled: FeatureMap<T>,
    gem: Matrix<T>,
    pub output: ClipOutput<T>,
}

fn check_finite<T: Scalar>(x: &FeatureMap<T>, what: &str, block: usize) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(GaitError::NonFinite { tensor: format!("{what}") }.in_block(block))
    }
}

fn forward_impl<T: Scalar>(x: &FeatureMap<T>, params: &ModelParams<T>, cfg: &ModelConfig, keep: bool) -> Result<ForwardCache<T>> {
    if params.blocks.len() != cfg.num_ffsl_blocks {
        return Err(GaitError::Config(format!(
            "parameters hold {} FFSL blocks, configuration expects {}",
            params.blocks.len(),
            cfg.num_ffsl_blocks
        )));
    }
    if x.channels() != cfg.in_channels || x.height() != cfg.input_height || x.width() != cfg.input_width {
        return Err(GaitError::Shape(format!(
            "clip is {}x{}x{}x{}, model expects {}xDx{}x{}",
            x.channels(),
            x.frames(),
            x.height(),
            x.width(),
            cfg.in_channels,
            cfg.input_height,
            cfg.input_width
        )));
    }
    cfg.check_frames(x.frames())?;
    let slope = T::lit(cfg.leaky_slope);
    let mut block_outputs = Vec::with_capacity(params.blocks.len());
    let mut msma_output = None;
    let mut current: Option<FeatureMap<T>> = None;
    for (b, block) in params.blocks.iter().enumerate() {
        let input = current.as_ref().unwrap_or(x);
        let pme = if cfg.ablation.use_pme { block.pme.as_ref() } else { None };
        let y = ffsl_forward(input, &block.bme, pme, slope).map_err(|e| e.in_block(b + 1))?;
        check_finite(&y, "ffsl output", b + 1)?;
        let next = if cfg.ablation.use_msma && b + 1 == cfg.msma_after_block {
            let mp = params.msma.as_ref().ok_or_else(|| GaitError::Config("MSMA enabled but parameters are missing".into()))?;
            let m = msma_forward(&y, mp).map_err(|e| e.in_block(b + 1))?;
            check_finite(&m, "msma output", b + 1)?;
            msma_output = keep.then(|| m.clone());
            m
        } else {
            y.clone()
        };
        if keep {
            block_outputs.push(y);
        }
        current = Some(next);
    }
    let last = current.expect("at least one block");
    let head_frames = last.frames();
    let tp = temporal_pool(&last);
    let gem = gem_pool(&tp.pooled, params.head.gem_delta, cfg.num_strips, T::lit(cfg.gem_eps))?;
    let embedding = sefc_forward(&gem, &params.head)?;
    let logits = classifier_forward(&embedding, &params.head)?;
    Ok(ForwardCache {
        input: if keep { x.clone() } else { FeatureMap::zeros(1, 1, 1, 1) },
        block_outputs,
        msma_output,
        tp_shape: last.shape(),
        tp_argmax: if keep { tp.argmax } else { Vec::new() },
        pooled: tp.pooled,
        gem,
        output: ClipOutput { embedding, logits, head_frames },
    })
}

/// Forward pass for one clip (`in_channels × D × H × W`).
pub fn forward_clip<T: Scalar>(x: &FeatureMap<T>, params: &ModelParams<T>, cfg: &ModelConfig) -> Result<ClipOutput<T>> {
    Ok(forward_impl(x, params, cfg, false)?.output)
}

/// Forward pass keeping activations for [`backward_clip`].
pub fn forward_clip_cached<T: Scalar>(x: &FeatureMap<T>, params: &ModelParams<T>, cfg: &ModelConfig) -> Result<ForwardCache<T>> {
    forward_impl(x, params, cfg, true)
}

/// Batched forward pass; clips run in parallel and results keep batch order.
pub fn gaitmm_forward<T: Scalar>(batch: &[FeatureMap<T>], params: &ModelParams<T>, cfg: &ModelConfig) -> Result<Vec<ClipOutput<T>>> {
    batch.par_iter().map(|x| forward_clip(x, params, cfg)).collect()
}

/// Backpropagates embedding/logit gradients of one clip, accumulating into `grads`.
pub fn backward_clip<T: Scalar>(
    cache: &ForwardCache<T>,
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    g_embedding: &Matrix<T>,
    g_logits: &Matrix<T>,
    grads: &mut ModelParams<T>,
) {
    let slope = T::lit(cfg.leaky_slope);
    let eps = T::lit(cfg.gem_eps);
    let mut g_emb = classifier_backward(&cache.output.embedding, &params.head, g_logits, &mut grads.head);
    for (a, &b) in g_emb.as_mut_slice().iter_mut().zip(g_embedding.as_slice()) {
        *a += b;
    }
    let g_gem = sefc_backward(&cache.gem, &params.head, &g_emb, &mut grads.head);
    let (g_pooled, g_delta) = gem_backward(&cache.pooled, params.head.gem_delta, cfg.num_strips, eps, &cache.gem, &g_gem);
    grads.head.gem_delta += g_delta;
    let mut g = temporal_pool_backward(cache.tp_shape, &cache.tp_argmax, &g_pooled);

    for b in (0..params.blocks.len()).rev() {
        let msma_here = cfg.ablation.use_msma && b + 1 == cfg.msma_after_block;
        if msma_here {
            let mp = params.msma.as_ref().expect("msma params");
            let gm = grads.msma.as_mut().expect("msma grads");
            g = msma_backward(&cache.block_outputs[b], &g, mp, gm);
        }
        let input = if b == 0 {
            &cache.input
        } else if cfg.ablation.use_msma && b == cfg.msma_after_block {
            cache.msma_output.as_ref().expect("msma output cached")
        } else {
            &cache.block_outputs[b - 1]
        };
        let gx = ffsl_backward(input, &cache.block_outputs[b], &g, &params.blocks[b], &mut grads.blocks[b], slope, b > 0);
        if let Some(gx) = gx {
            g = gx;
        }
    }
}
