//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("unknown tensor `{0}`")]
    UnknownTensor(String),

    #[error(
        "infeasible CTC target: {frames} frames cannot emit {label_len} labels \
         with {repeats} adjacent repeats (need {})",
        label_len + repeats
    )]
    CtcInfeasible {
        frames: usize,
        label_len: usize,
        repeats: usize,
    },

    #[error("privacy accounting: {0}")]
    Accounting(String),

    #[error("calibration target unreachable: {0}")]
    CalibrationUnreachable(String),

    #[error("dataset corrupt: {0}")]
    DatasetCorrupt(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
