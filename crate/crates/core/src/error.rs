use thiserror::Error;

use crate::domain::SimplexWeights;

/// Errors raised by the optimizers, subsolvers and benchmark constructors.
#[derive(Debug, Clone, Error)]
pub enum MoblError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("invalid configuration: {0}")]
    Configuration(String),

    #[error("numerical breakdown in conjugate gradient at iteration {iteration}: {reason}")]
    NumericalBreakdown { iteration: usize, reason: String },

    #[error("lower-level iterate diverged at step {step}")]
    Divergence { step: usize },

    #[error("weighted-Chebyshev subproblem did not converge (kkt residual {residual:e})")]
    NonConvergence { best: SimplexWeights, residual: f64 },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("verification oracle failed: {0}")]
    OracleFailure(String),

    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T, E = MoblError> = std::result::Result<T, E>;
