use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wav error on {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },

    #[error("duplicate clip id `{0}`")]
    DuplicateId(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty clip")]
    EmptyClip,

    #[error("no periodicity detected")]
    NoPeriodicity,

    #[error("envelope too short for tempo estimation: {seconds:.2} s < {required:.2} s")]
    EnvelopeTooShort { seconds: f64, required: f64 },

    #[error("stretch rate {0} outside [0.25, 4.0]")]
    RateOutOfBounds(f64),

    #[error("tempo gap too large: implied rate {rate:.4} outside [{min}, {max}]")]
    TempoGapTooLarge { rate: f64, min: f64, max: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("nan loss at epoch {epoch}, batch {batch}")]
    NanLoss { epoch: usize, batch: usize },

    #[error("constraint unsatisfiable: {0}")]
    Retry(String),

    #[error("synthesis aborted; infeasible cells: {}", .0.join("; "))]
    Infeasible(Vec<String>),

    #[error("bad file format in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("empty batch")]
    EmptyBatch,

    #[error("no evaluable class: every class lacks either a positive or a negative example")]
    NoEvaluableClass,

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidParameter(message.into())
    }
}
