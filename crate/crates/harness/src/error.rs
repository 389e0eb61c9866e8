use fracgd_core::error::CoreError;
use thiserror::Error;

/// Harness-level failures, split by the exit code they map to.
#[derive(Debug, Error)]
pub enum HarnessError {
    /// Bad configuration or startup precondition — exit code 1.
    #[error("config error: {0}")]
    Config(String),
    /// Filesystem trouble reading inputs or writing outputs — exit code 2.
    #[error("i/o error: {0}")]
    Io(String),
    /// Propagated numerical-core failure.
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl HarnessError {
    /// CLI exit code: 0 is success (including recorded divergences), 1 a
    /// config error, 2 an I/O error.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            HarnessError::Io(_) => 2,
            HarnessError::Core(CoreError::Io(_)) => 2,
            HarnessError::Core(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

/// Wraps an I/O result with the path that failed.
pub fn io_at<T>(path: &std::path::Path, r: std::io::Result<T>) -> Result<T> {
    r.map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))
}
