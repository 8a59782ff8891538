use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] ltrack_core::Error),
    #[error(transparent)]
    Metrics(#[from] ltrack_metrics::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid domain spec: {0}")]
    Domain(String),
    #[error("sequence has {len} frames, a clip of {clip_len} needs at least {needed}")]
    SequenceTooShort { len: usize, clip_len: usize, needed: usize },
    #[error("{path}: sequence is tagged domain {found:?}, expected {expected:?}")]
    Provenance {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("cross-domain evaluation must not read the training domain {0:?}")]
    SameDomain(String),
    #[error("non-finite loss at step {step}; state dumped to {dump}")]
    NonFiniteLoss { step: u64, dump: PathBuf },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("unknown study {0:?} (expected keyfeature, prompts, adapter, template or toklen)")]
    UnknownStudy(String),
    #[error("no data: {0}")]
    NoData(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Self::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
