use thiserror::Error;

/// Errors surfaced by the numeric core.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected a scalar, got shape {shape:?}")]
    NonScalar {
        op: &'static str,
        shape: Vec<usize>,
    },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("symmetric tridiagonal eigensolver failed to converge within {max_sweeps} sweeps")]
    EigenNonConvergence { max_sweeps: usize },
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
