//! Sectioned TOML run configuration: `[model]`, `[train]`, `[data]`.
//!
//! A file only needs the keys it changes; everything else comes from the
//! chosen preset. A `[run]` table (as written into run manifests) is ignored
//! so a manifest can be fed back in as a config.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::protocol::ProtocolKind;
use crate::error::{GaitError, Result};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub protocol: ProtocolKind,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { protocol: ProtocolKind::CasiaBLt }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Preset {
    /// Published hyperparameters: 64×44 input, 80k iterations, P=K=8.
    #[default]
    Paper,
    /// Small network and short schedule for CPU runs on generated data.
    Desk,
}

impl FromStr for Preset {
    type Err = GaitError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            other => Err(GaitError::Config(format!("unknown preset `{other}` (expected paper or desk)"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Paper => "paper",
            Preset::Desk => "desk",
        })
    }
}

impl RunConfig {
    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Paper => Self::default(),
            Preset::Desk => Self {
                model: ModelConfig::desk(),
                train: TrainConfig::desk(),
                data: DataConfig { protocol: ProtocolKind::Synth },
            },
        }
    }

    /// Applies the keys in `text` on top of `base`.
    pub fn from_toml_over(base: &RunConfig, text: &str) -> Result<Self> {
        let overrides: toml::Table = text.parse().map_err(|e: toml::de::Error| GaitError::Config(e.to_string()))?;
        let mut merged = toml::Table::try_from(base).map_err(|e| GaitError::Config(e.to_string()))?;
        for (k, v) in overrides {
            if k != "run" {
                merge(&mut merged, k, v);
            }
        }
        toml::Value::Table(merged).try_into().map_err(|e: toml::de::Error| GaitError::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_over(&Self::default(), text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| GaitError::Config(e.to_string()))
    }

    /// Every violated model and training invariant.
    pub fn violations(&self) -> Vec<String> {
        let mut v = self.model.violations();
        v.extend(self.train.violations());
        if let Err(e) = self.model.check_frames(self.train.frames) {
            if v.is_empty() {
                v.push(e.to_string());
            }
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

fn merge(into: &mut toml::Table, key: String, value: toml::Value) {
    match (into.get_mut(&key), value) {
        (Some(toml::Value::Table(dst)), toml::Value::Table(src)) => {
            for (k, v) in src {
                merge(dst, k, v);
            }
        }
        (_, v) => {
            into.insert(key, v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_overrides_preset() {
        let cfg = RunConfig::from_toml_over(&RunConfig::preset(Preset::Desk), "[train]\niterations = 7\n[model.ablation]\nuse_pme = false\n").unwrap();
        assert_eq!(cfg.train.iterations, 7);
        assert!(!cfg.model.ablation.use_pme);
        assert!(cfg.model.ablation.use_msma);
        assert_eq!(cfg.model.input_height, 32);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(RunConfig::from_toml("[model]\nk_part = 4\n").is_err());
    }

    #[test]
    fn round_trip() {
        let cfg = RunConfig::preset(Preset::Desk);
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
        let with_run = format!("[run]\ncommand = \"train\"\n{text}");
        assert_eq!(RunConfig::from_toml(&with_run).unwrap(), cfg);
    }
}
