use std::path::Path;

use serde::Serialize;

use gaitmm::config::RunConfig;
use gaitmm::GaitError;

pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (", env!("GAITMM_GIT_DESCRIBE"), ")");
pub const MANIFEST_FILE: &str = "manifest.toml";

/// What was run, from where, and with which resolved configuration. The
/// file reparses as a `--config`: the `[run]` table is ignored on load.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config_path: String,
    pub out_dir: String,
    pub seed: u64,
    pub version: String,
    /// `(module, standard, depthwise)` counts, when known.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parameters: Option<Vec<(String, usize, usize)>>,
    #[serde(skip)]
    config: RunConfig,
}

impl RunManifest {
    pub fn new(command: &str, config_path: Option<&Path>, out_dir: &Path, config: &RunConfig) -> Self {
        Self {
            command: command.into(),
            args: std::env::args().collect(),
            config_path: config_path.map(|p| p.display().to_string()).unwrap_or_default(),
            out_dir: out_dir.display().to_string(),
            seed: config.train.seed,
            version: VERSION.into(),
            parameters: None,
            config: config.clone(),
        }
    }

    pub fn to_toml(&self) -> Result<String, GaitError> {
        let mut doc = toml::Table::new();
        let run = toml::Table::try_from(self).map_err(|e| GaitError::Config(e.to_string()))?;
        doc.insert("run".into(), toml::Value::Table(run));
        let cfg = toml::Table::try_from(&self.config).map_err(|e| GaitError::Config(e.to_string()))?;
        doc.extend(cfg);
        toml::to_string(&doc).map_err(|e| GaitError::Config(e.to_string()))
    }

    pub fn write(&self, out_dir: &Path) -> Result<(), GaitError> {
        std::fs::create_dir_all(out_dir).map_err(|e| GaitError::Data(format!("cannot create {}: {e}", out_dir.display())))?;
        let path = out_dir.join(MANIFEST_FILE);
        std::fs::write(&path, self.to_toml()?).map_err(|e| GaitError::Data(format!("cannot write {}: {e}", path.display())))
    }
}
