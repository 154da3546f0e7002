use thiserror::Error;

pub type Result<T, E = AttnError> = std::result::Result<T, E>;

/// Failures raised by the numerical routines. Every variant names the
/// operation that produced it so callers can report it verbatim.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum AttnError {
    #[error("{op}: dimension mismatch, {left} vs {right}")]
    DimensionMismatch {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("{op}: non-finite value at ({row}, {col})")]
    NonFinite {
        op: &'static str,
        row: usize,
        col: usize,
    },

    #[error("{op}: degenerate normalizer {value:e} at row {row}")]
    DegenerateNormalizer {
        op: &'static str,
        row: usize,
        value: f64,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown method `{label}`; valid labels: {valid}")]
    UnknownMethod { label: String, valid: String },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

impl AttnError {
    pub(crate) fn shapes(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        AttnError::DimensionMismatch {
            op,
            left: format!("{}x{}", left.0, left.1),
            right: format!("{}x{}", right.0, right.1),
        }
    }
}
