use thiserror::Error;

/// Errors raised by the laboratory operations.
///
/// Validation-type failures (bad arguments, broken invariants, singular
/// factors) are separated from size/feasibility failures so that callers can
/// map them onto distinct exit statuses.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid set: {0}")]
    InvalidSet(String),

    #[error("size limit exceeded for {what}: {size} > cap {cap}")]
    SizeLimit { what: String, size: u128, cap: u128 },

    #[error("singular factor {factor} at index {index}: 1 - ... = {value}")]
    SingularFactor {
        factor: &'static str,
        index: usize,
        value: f64,
    },

    #[error("insufficient dyadic resolution: term {term} needs exponent >= {needed}, point has {have}")]
    Resolution { term: usize, needed: u64, have: u64 },

    #[error("{kind} violation at block {block}: {detail}")]
    Validation {
        kind: &'static str,
        block: usize,
        detail: String,
    },

    #[error("infeasible: {0}")]
    Feasibility(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

impl LabError {
    /// True for errors caused by a size cap or a desk-scale feasibility limit.
    pub fn is_size_or_feasibility(&self) -> bool {
        matches!(self, LabError::SizeLimit { .. } | LabError::Feasibility(_))
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        LabError::InvalidArgument(msg.into())
    }

    pub(crate) fn size(what: impl Into<String>, size: u128, cap: u128) -> Self {
        LabError::SizeLimit {
            what: what.into(),
            size,
            cap,
        }
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
