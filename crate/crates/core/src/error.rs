use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("unknown viewpoint label {label:?}; valid labels are: {}", valid.join(", "))]
    UnknownLabel { label: String, valid: Vec<String> },

    #[error("duplicate clip: patient {patient:?} clip {clip:?}")]
    DuplicateClip { patient: String, clip: String },

    #[error("dataset error: {0}")]
    Data(String),

    #[error("clip {clip:?} has {len} frames but {needed} were requested")]
    ClipTooShort { clip: String, len: usize, needed: usize },

    #[error("non-finite loss in epoch {epoch}, batch {batch} (lr = {lr:e})")]
    NonFiniteLoss { epoch: usize, batch: usize, lr: f64 },

    #[error("fold {fold}: patients {patients:?} appear in both train and test")]
    Leakage { fold: usize, patients: Vec<String> },

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parameter file: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Path {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at(self, path: impl Into<PathBuf>) -> Self {
        Error::Path {
            path: path.into(),
            source: Box::new(self),
        }
    }
}
