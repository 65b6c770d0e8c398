use serde::{Deserialize, Serialize};

use crate::error::{GaitError, Result};

/// Filter family used by the part-level extractor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PmeMode {
    #[default]
    Standard,
    DepthwiseSeparable,
}

/// Switches for the FFSL/MSMA ablation rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ablation {
    #[serde(default = "yes")]
    pub use_pme: bool,
    #[serde(default = "yes")]
    pub use_msma: bool,
}

fn yes() -> bool {
    true
}

impl Default for Ablation {
    fn default() -> Self {
        Self { use_pme: true, use_msma: true }
    }
}

impl Ablation {
    /// The four ablation rows in table order: BME, BME+PME, BME+MSMA, full.
    pub fn matrix() -> [(&'static str, Ablation); 4] {
        [
            ("bme", Ablation { use_pme: false, use_msma: false }),
            ("bme+pme", Ablation { use_pme: true, use_msma: false }),
            ("bme+msma", Ablation { use_pme: false, use_msma: true }),
            ("full", Ablation { use_pme: true, use_msma: true }),
        ]
    }
}

/// Architecture hyperparameters. Defaults are the 3-block CASIA-B network
/// on 64×44 silhouettes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub num_ffsl_blocks: usize,
    pub stage_channels: Vec<usize>,
    /// Horizontal slabs in every part-level extractor.
    pub k_parts: usize,
    /// Horizontal slabs in the part branch of MSMA.
    pub l_parts: usize,
    /// MSMA runs after this many FFSL blocks (1-based).
    pub msma_after_block: usize,
    pub pme_mode: PmeMode,
    pub num_strips: usize,
    pub embed_dim: usize,
    pub num_classes: usize,
    pub leaky_slope: f64,
    pub lma_init: f64,
    pub gem_delta_init: f64,
    pub gem_eps: f64,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            input_height: 64,
            input_width: 44,
            num_ffsl_blocks: 3,
            stage_channels: vec![32, 64, 128],
            k_parts: 8,
            l_parts: 8,
            msma_after_block: 2,
            pme_mode: PmeMode::Standard,
            num_strips: 16,
            embed_dim: 256,
            num_classes: 74,
            leaky_slope: 0.01,
            lma_init: 0.5,
            gem_delta_init: 6.5,
            gem_eps: 1e-6,
            ablation: Ablation::default(),
        }
    }
}

impl ModelConfig {
    /// Six-block variant for the large multi-view dataset.
    pub fn oumvlp() -> Self {
        Self {
            num_ffsl_blocks: 6,
            stage_channels: vec![32, 32, 64, 64, 128, 128],
            msma_after_block: 4,
            num_classes: 5153,
            ..Self::default()
        }
    }

    /// Small network used for CPU-scale training on synthetic walkers.
    pub fn desk() -> Self {
        Self {
            input_height: 32,
            input_width: 22,
            stage_channels: vec![8, 16, 32],
            num_strips: 16,
            embed_dim: 64,
            num_classes: 8,
            ..Self::default()
        }
    }

    pub fn out_channels(&self) -> usize {
        *self.stage_channels.last().unwrap_or(&0)
    }

    pub fn block_in_channels(&self, block: usize) -> usize {
        if block == 0 {
            self.in_channels
        } else {
            self.stage_channels[block - 1]
        }
    }

    /// Frames reaching the head for a clip of `frames` input frames.
    pub fn output_frames(&self, frames: usize) -> usize {
        if self.ablation.use_msma {
            frames / 3
        } else {
            frames
        }
    }

    /// Every violated invariant, in a stable order.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let positive = [
            ("in_channels", self.in_channels),
            ("input_height", self.input_height),
            ("input_width", self.input_width),
            ("num_ffsl_blocks", self.num_ffsl_blocks),
            ("k_parts", self.k_parts),
            ("l_parts", self.l_parts),
            ("num_strips", self.num_strips),
            ("embed_dim", self.embed_dim),
            ("num_classes", self.num_classes),
        ];
        for (name, value) in positive {
            if value == 0 {
                v.push(format!("{name} must be positive"));
            }
        }
        if self.stage_channels.len() != self.num_ffsl_blocks {
            v.push(format!(
                "stage_channels has {} entries but num_ffsl_blocks is {}",
                self.stage_channels.len(),
                self.num_ffsl_blocks
            ));
        }
        if self.stage_channels.iter().any(|&c| c == 0) {
            v.push("stage_channels entries must be positive".into());
        }
        let h = self.input_height;
        if h > 0 && self.k_parts > 0 && h % self.k_parts != 0 {
            v.push(format!("input_height {h} is not divisible by k_parts {}", self.k_parts));
        }
        if h > 0 && self.l_parts > 0 && h % self.l_parts != 0 {
            v.push(format!("input_height {h} is not divisible by l_parts {}", self.l_parts));
        }
        if h > 0 && self.num_strips > 0 && h % self.num_strips != 0 {
            v.push(format!("input_height {h} is not divisible by num_strips {}", self.num_strips));
        }
        if self.ablation.use_msma && !(1 <= self.msma_after_block && self.msma_after_block < self.num_ffsl_blocks) {
            v.push(format!(
                "msma_after_block {} must satisfy 1 <= msma_after_block < num_ffsl_blocks ({})",
                self.msma_after_block, self.num_ffsl_blocks
            ));
        }
        if !(self.gem_delta_init > 0.0 && self.gem_delta_init.is_finite()) {
            v.push(format!("gem_delta_init {} must be a finite positive number", self.gem_delta_init));
        }
        if !(self.gem_eps > 0.0) {
            v.push("gem_eps must be positive".into());
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            v.push(format!("leaky_slope {} must lie in [0, 1)", self.leaky_slope));
        }
        if !self.lma_init.is_finite() {
            v.push("lma_init must be finite".into());
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

    /// Clip lengths the network accepts: MSMA needs a multiple of three.
    pub fn check_frames(&self, frames: usize) -> Result<()> {
        if frames == 0 {
            return Err(GaitError::Shape("clip has no frames".into()));
        }
        if self.ablation.use_msma && frames % 3 != 0 {
            return Err(GaitError::Shape(format!("frames entering MSMA ({frames}) must be divisible by 3")));
        }
        Ok(())
    }
}
