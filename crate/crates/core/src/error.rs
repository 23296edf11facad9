use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("LBP code {0} outside 0..=9")]
    InvalidCode(f32),

    #[error("fusion block is frozen; train-mode forward is not allowed")]
    FrozenViolation,

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("video '{video_id}' of dataset '{dataset}' appears in both train and test")]
    Leakage { video_id: String, dataset: String },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("non-finite loss at step {step}")]
    Divergence { step: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
