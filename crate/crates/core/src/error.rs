use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("graph must contain at least one node")]
    EmptyGraph,

    #[error("node index {index} out of range for {n} nodes")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("matrix is not symmetric: {0}")]
    NotSymmetric(String),

    #[error("graph is already normalized")]
    AlreadyNormalized,

    #[error("operation requires a normalized graph")]
    NotNormalized,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("dense operation on {n} nodes exceeds the limit of {limit}")]
    DenseLimit { n: usize, limit: usize },

    #[error(
        "power iteration did not converge after {iterations} iterations (last estimate {estimate})"
    )]
    NoConvergence { iterations: usize, estimate: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing required file {0}")]
    MissingFile(PathBuf),

    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    #[error("inconsistent dataset: {0}")]
    Inconsistent(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(
        "matrix is singular or not positive definite (smallest eigenvalue {min_eigenvalue:e})"
    )]
    Singular { min_eigenvalue: f64 },

    #[error("matrix is not positive semi-definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("alignment undefined for a zero-norm matrix")]
    ZeroNorm,

    #[error("iteration diverged at step {step}")]
    Divergence { step: usize },

    #[error("operation needs {required} matrix entries, limit is {limit}")]
    MemoryLimit { required: usize, limit: usize },

    #[error("non-finite values in {0}")]
    NonFinite(String),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    /// True for failures caused by reading or validating on-disk data.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::MissingFile(_)
                | Error::Parse { .. }
                | Error::Inconsistent(_)
                | Error::IndexOutOfRange { .. }
                | Error::EmptyGraph
        )
    }

    /// True for configuration errors detectable before any computation.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::InvalidConfig(_))
    }
}
