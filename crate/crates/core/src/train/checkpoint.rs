//! Self-describing training snapshots: configuration, parameters and Adam
//! moments in one JSON document with base64 little-endian tensor blobs.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::error::{GaitError, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::scalar::Scalar;

use super::config::TrainConfig;
use super::optimizer::AdamState;

pub const CHECKPOINT_SCHEMA: &str = "gaitmm-checkpoint/v1";

/// Training state after `iteration` completed steps. The batch sampler's
/// random stream is a pure function of `(train.seed, iteration)`, so the
/// iteration count is the whole sampler state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub iteration: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub params: ModelParams<T>,
    pub adam: AdamState<T>,
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    len: usize,
    param: String,
    m: String,
    v: String,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    schema: String,
    dtype: String,
    iteration: u64,
    adam_step: u64,
    sampler_seed: u64,
    model: ModelConfig,
    train: TrainConfig,
    tensors: Vec<TensorRecord>,
}

fn encode<T: Scalar>(values: &[T]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * T::BYTES);
    for &v in values {
        v.write_le(&mut bytes);
    }
    B64.encode(bytes)
}

fn decode_into<T: Scalar>(text: &str, dtype: &str, out: &mut [T], name: &str) -> Result<()> {
    let bytes = B64.decode(text).map_err(|e| GaitError::Checkpoint(format!("tensor {name}: {e}")))?;
    let width = match dtype {
        "f32" => 4,
        "f64" => 8,
        other => return Err(GaitError::Checkpoint(format!("unsupported dtype `{other}`"))),
    };
    if bytes.len() != out.len() * width {
        return Err(GaitError::Checkpoint(format!(
            "tensor {name}: {} bytes for {} values of {dtype}",
            bytes.len(),
            out.len()
        )));
    }
    for (slot, chunk) in out.iter_mut().zip(bytes.chunks_exact(width)) {
        *slot = match width {
            4 => T::lit(f32::read_le(chunk) as f64),
            _ => T::lit(f64::read_le(chunk)),
        };
    }
    Ok(())
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_json(&self) -> Result<String> {
        let names = self.params.named_tensors();
        let (ms, vs) = (self.adam.m.tensors(), self.adam.v.tensors());
        let tensors = names
            .into_iter()
            .zip(ms)
            .zip(vs)
            .map(|(((name, p), m), v)| TensorRecord { name, len: p.len(), param: encode(p), m: encode(m), v: encode(v) })
            .collect();
        let file = CheckpointFile {
            schema: CHECKPOINT_SCHEMA.into(),
            dtype: T::DTYPE.into(),
            iteration: self.iteration,
            adam_step: self.adam.step,
            sampler_seed: self.train.seed,
            model: self.model.clone(),
            train: self.train.clone(),
            tensors,
        };
        serde_json::to_string(&file).map_err(|e| GaitError::Checkpoint(e.to_string()))
    }

    /// Parses a checkpoint. Values stored at another precision are converted.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text).map_err(|e| GaitError::Checkpoint(e.to_string()))?;
        if file.schema != CHECKPOINT_SCHEMA {
            return Err(GaitError::Checkpoint(format!(
                "unknown schema `{}` (expected {CHECKPOINT_SCHEMA})",
                file.schema
            )));
        }
        file.model.validate()?;
        let mut params = ModelParams::<T>::zeros(&file.model);
        let mut adam = AdamState::new(&params);
        adam.step = file.adam_step;
        let expected: Vec<(String, usize)> = params.named_tensors().into_iter().map(|(n, t)| (n, t.len())).collect();
        if expected.len() != file.tensors.len() {
            return Err(GaitError::Checkpoint(format!(
                "{} tensors stored, configuration needs {}",
                file.tensors.len(),
                expected.len()
            )));
        }
        for ((name, len), rec) in expected.iter().zip(&file.tensors) {
            if *name != rec.name || *len != rec.len {
                return Err(GaitError::Checkpoint(format!(
                    "tensor {} ({} values) does not match expected {name} ({len} values)",
                    rec.name, rec.len
                )));
            }
        }
        for (slot, rec) in params.tensors_mut().into_iter().zip(&file.tensors) {
            decode_into(&rec.param, &file.dtype, slot, &rec.name)?;
        }
        for (slot, rec) in adam.m.tensors_mut().into_iter().zip(&file.tensors) {
            decode_into(&rec.m, &file.dtype, slot, &rec.name)?;
        }
        for (slot, rec) in adam.v.tensors_mut().into_iter().zip(&file.tensors) {
            decode_into(&rec.v, &file.dtype, slot, &rec.name)?;
        }
        Ok(Self { iteration: file.iteration, model: file.model, train: file.train, params, adam })
    }

    /// Writes to a sibling temporary file, then renames over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_json()?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| GaitError::io(dir, e))?;
        }
        let tmp = path.with_extension("json.tmp");
        {
            let mut f = fs::File::create(&tmp).map_err(|e| GaitError::io(&tmp, e))?;
            f.write_all(text.as_bytes()).map_err(|e| GaitError::io(&tmp, e))?;
            f.sync_all().map_err(|e| GaitError::io(&tmp, e))?;
        }
        fs::rename(&tmp, path).map_err(|e| GaitError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| GaitError::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Element type a checkpoint file was written with.
pub fn checkpoint_dtype(path: &Path) -> Result<String> {
    #[derive(Deserialize)]
    struct Head {
        schema: String,
        dtype: String,
    }
    let text = fs::read_to_string(path).map_err(|e| GaitError::io(path, e))?;
    let head: Head = serde_json::from_str(&text).map_err(|e| GaitError::Checkpoint(e.to_string()))?;
    if head.schema != CHECKPOINT_SCHEMA {
        return Err(GaitError::Checkpoint(format!("unknown schema `{}`", head.schema)));
    }
    Ok(head.dtype)
}
