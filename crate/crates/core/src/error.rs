use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the detection pipeline.
#[derive(Debug, Error)]
pub enum BicError {
    #[error("dimension error in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("size error: {0}")]
    Size(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at {path}: {message}")]
    Parse { path: String, message: String },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("lookup error: unknown id `{0}`")]
    Lookup(String),

    #[error("numeric error in `{param}`: {message}")]
    Numeric { param: String, message: String },

    #[error("training error: {0}")]
    Training(String),

    #[error("stratification error: {0}")]
    Stratification(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl BicError {
    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        BicError::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        BicError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad configuration rather than a failed run.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            BicError::Config(_) | BicError::Parse { .. } | BicError::Json(_)
        )
    }
}

pub type Result<T, E = BicError> = std::result::Result<T, E>;
