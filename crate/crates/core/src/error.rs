use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("function evaluated twice at the same point gave {first} and {second}")]
    NonDeterministic { first: f64, second: f64 },

    #[error("non-finite gradient at optimizer step {step}")]
    NonFiniteGradient { step: u64 },

    #[error("non-finite loss at epoch {epoch}")]
    Diverged { epoch: usize, history: Vec<f64> },

    #[error("classifier must be frozen before perturbation")]
    ModelNotFrozen,

    #[error("classifier is frozen and cannot be trained")]
    ModelFrozen,

    #[error("malformed {format} data at byte {offset}: {reason}")]
    Format {
        format: &'static str,
        offset: u64,
        reason: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(format: &'static str, offset: u64, reason: impl Into<String>) -> Self {
        Error::Format {
            format,
            offset,
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
