use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("malformed record `{id}`: {reason}")]
    MalformedRecord { id: String, reason: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("infeasible synthetic targets: {0}")]
    InfeasibleTargets(String),

    #[error("split fractions must be nonnegative and sum to 1 (got {0:?})")]
    BadFractions(Vec<f64>),

    #[error("zero-norm embedding (norm {norm:e})")]
    ZeroVector { norm: f64 },

    #[error("sample `{id}`: {source}")]
    Sample {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("empty input")]
    EmptyInput,

    #[error("model is not fitted: {0}")]
    UnfitModel(String),

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("shape error: {0}")]
    ShapeError(String),

    #[error("non-finite activation in {0}")]
    NonFiniteActivation(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no samples left after task filter {0}")]
    EmptyAfterFilter(String),

    #[error("fraction {fraction} leaves class {class} without samples")]
    FractionTooSmall { fraction: f64, class: String },

    #[error("serialization: {0}")]
    Serialization(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_sample(self, id: &str) -> Self {
        Error::Sample {
            id: id.to_string(),
            source: Box::new(self),
        }
    }

    /// Whether the error reflects bad user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Sample { source, .. } => source.is_validation(),
            Error::Io { .. } | Error::Diverged { .. } | Error::NonFiniteActivation(_) => false,
            _ => true,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}
