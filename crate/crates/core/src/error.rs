use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate utterance id `{id}` (line {line})")]
    DuplicateId { id: String, line: usize },

    #[error("ids missing from pivot corpus: {}", .0.join(", "))]
    MissingPivotIds(Vec<String>),

    #[error("invalid segmentation: {0}")]
    Segmentation(String),

    #[error("soft-boundary marker `{0}` collides with the phoneme inventory")]
    MarkerCollision(String),

    #[error("unknown phoneme symbol `{0}`")]
    UnknownSymbol(String),

    #[error("invalid hyperparameter: {0}")]
    Hyperparam(String),

    #[error("inconsistent sampler state: {0}")]
    InconsistentState(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("unknown metric `{name}` (valid: {})", .valid.join(", "))]
    UnknownMetric { name: String, valid: Vec<String> },

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
