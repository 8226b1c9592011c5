use thiserror::Error;

use crate::matrix::DenseVector;

pub type Result<T> = std::result::Result<T, LessError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LessError {
    #[error("matrix is rank deficient: |R[{index},{index}]| = {value:e} <= threshold {threshold:e}")]
    RankDeficient {
        index: usize,
        value: f64,
        threshold: f64,
    },

    /// The iterate at the final iteration is carried along so callers can
    /// decide whether to accept it.
    #[error("conjugate gradient did not converge after {iterations} iterations (relative residual {residual:e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        iterate: DenseVector,
    },

    #[error("gamma correction undefined: sketch size m = {m} must exceed d = {d}")]
    GammaUndefined { m: usize, d: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("system is consistent (optimal loss {loss:e}); relative error is undefined")]
    ConsistentSystem { loss: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value at position {0}")]
    NonFinite(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("machine {id} failed: {cause}")]
    MachineFailed { id: usize, cause: Box<LessError> },

    #[error("machine {machine} opened its stream {observed} times, protocol allows {expected}")]
    PassViolation {
        machine: usize,
        expected: usize,
        observed: usize,
    },

    #[error("stream discipline violated on machine {machine}: {reason}")]
    StreamViolation { machine: usize, reason: String },

    #[error("space cap exceeded on machine {machine}: peak {peak} words > cap {cap}")]
    SpaceCapExceeded {
        machine: usize,
        peak: usize,
        cap: usize,
    },
}

impl LessError {
    /// True for failures caused by the numerics (as opposed to bad input or
    /// protocol bugs).
    pub fn is_numerical(&self) -> bool {
        match self {
            LessError::RankDeficient { .. }
            | LessError::NotConverged { .. }
            | LessError::GammaUndefined { .. }
            | LessError::ConsistentSystem { .. } => true,
            LessError::MachineFailed { cause, .. } => cause.is_numerical(),
            _ => false,
        }
    }
}
