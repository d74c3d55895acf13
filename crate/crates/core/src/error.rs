use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum CknError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("singular matrix: {0}")]
    SingularMatrix(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("degenerate sphere step (zero vector before projection)")]
    StepDegenerate,

    #[error("solver did not converge after {iterations} passes (gradient norm {grad_norm:.3e})")]
    Convergence {
        iterations: usize,
        grad_norm: f64,
        /// Row-major weights of the last iterate.
        last_iterate: Vec<f64>,
    },

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("checkpoint version mismatch: file has {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = CknError> = std::result::Result<T, E>;

impl CknError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CknError::Io {
            path: path.into(),
            source,
        }
    }
}

macro_rules! ensure {
    ($cond:expr, $variant:ident, $($fmt:tt)+) => {
        if !$cond {
            return Err($crate::error::CknError::$variant(format!($($fmt)+)));
        }
    };
}
pub(crate) use ensure;
