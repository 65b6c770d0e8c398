//! GaitMM: part-independent spatio-temporal feature learning with learnable
//! multi-scale temporal compression for silhouette gait recognition.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below name the two concrete instantiations.

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{GaitError, Result};
pub use scalar::Scalar;
pub use tensor::{FeatureMap, Matrix};

pub type FeatureMap32 = FeatureMap<f32>;
pub type FeatureMap64 = FeatureMap<f64>;
pub type ModelParams32 = model::ModelParams<f32>;
pub type ModelParams64 = model::ModelParams<f64>;
