//! GaitMM network: FFSL blocks, MSMA, temporal pooling, GeM and SeFC.

pub mod config;
pub mod conv;
pub mod ffsl;
pub mod head;
pub mod msma;
pub mod network;

pub use config::{Ablation, ModelConfig, PmeMode};
pub use conv::{Conv3dWeights, DepthwiseSeparable3dWeights, KERNEL_VOLUME};
pub use ffsl::{bme_forward, ffsl_forward, pme_forward, FfslParams, PartConv, PartFilterBank};
pub use head::{classifier_forward, gem_pool, sefc_forward, temporal_pool, HeadParams, Linear, TemporalPool};
pub use msma::{lma_forward, msma_forward, LmaParams, MsmaParams, LMA_WINDOW};
pub use network::{
    backward_clip, count_parameters, forward_clip, forward_clip_cached, gaitmm_forward, ClipOutput, ForwardCache,
    ModelParams, ParamCount,
};
