use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: field `{field}`: {message}")]
    Field {
        line: usize,
        field: String,
        message: String,
    },

    #[error("missing header record")]
    MissingHeader,

    #[error("eye and character streams do not overlap")]
    NoOverlap,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite loss at batch element {index}")]
    NonFiniteLoss { index: usize },

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("no positive examples for profile {0}")]
    NoPositiveExamples(String),

    #[error("corrupt model file: {0}")]
    CorruptModel(String),

    #[error("unsupported model version {0}")]
    UnsupportedVersion(u64),

    #[error("model dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("episodes do not fit: {0}")]
    EpisodesDoNotFit(String),

    #[error("timestamp {t} is not after previous timestamp {last}")]
    NonMonotonic { t: f64, last: f64 },

    #[error("no models loaded")]
    NoModels,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Stream(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
