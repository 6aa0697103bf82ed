use thiserror::Error;

/// Errors raised by the solver, the problem builders and the file parsers.
#[derive(Debug, Error)]
pub enum SdpError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("singular multiplier system (condition estimate {condition:.3e})")]
    SingularSystem { condition: f64 },

    #[error("degenerate block {block} in retraction (smallest Gram eigenvalue {min_eig:.3e})")]
    DegenerateBlock { block: usize, min_eig: f64 },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unsupported input: {0}")]
    Unsupported(String),

    #[error("eigenvalue computation failed: {0}")]
    Eigen(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SdpError>;

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(SdpError::DimensionMismatch {
            context,
            expected,
            got,
        });
    }
    Ok(())
}
