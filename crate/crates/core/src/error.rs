use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("batch has a single identity; the triplet loss needs negatives")]
    SingleIdentity,

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("unparsable file names in {dir}: {files:?}")]
    UnparsableNames { dir: PathBuf, files: Vec<String> },

    #[error("non-finite loss at step {step}: {snapshot}")]
    NonFiniteLoss { step: u64, snapshot: String },

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
