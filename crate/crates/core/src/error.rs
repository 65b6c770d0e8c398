use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = GaitError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GaitError {
    /// Weights or hyperparameters that cannot describe a valid network.
    #[error("configuration error: {0}")]
    Config(String),

    /// Several configuration invariants violated at once.
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    ConfigInvariants(Vec<String>),

    /// Input tensor with dimensions the operation cannot accept.
    #[error("input shape error: {0}")]
    Shape(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("non-finite value in tensor `{tensor}`")]
    NonFinite { tensor: String },

    #[error("FFSL block {index}: {source}")]
    Block {
        index: usize,
        #[source]
        source: Box<GaitError>,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl GaitError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GaitError::Io { path: path.into(), source }
    }

    pub(crate) fn in_block(self, index: usize) -> Self {
        GaitError::Block { index, source: Box::new(self) }
    }

    /// Innermost error once block wrappers are peeled off.
    pub fn root(&self) -> &GaitError {
        match self {
            GaitError::Block { source, .. } => source.root(),
            other => other,
        }
    }
}
