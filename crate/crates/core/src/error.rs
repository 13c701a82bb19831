use thiserror::Error;

use crate::action::PathSolution;
use crate::search::EffHamEstimate;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("path optimization did not converge (best action {best_value}, gradient {gradient:e})", best_value = .best.action_value)]
    OptimizationFailure {
        best: Box<PathSolution>,
        gradient: f64,
    },

    #[error("configuration search failed: no restart converged (best D = {})", .best.d_value)]
    SearchFailure { best: Box<EffHamEstimate> },

    #[error("conjugate gradient stalled after {iterations} iterations (relative residual {residual:e})")]
    SolverFailure { iterations: usize, residual: f64 },

    #[error("maximizer of the Legendre objective lies on the lattice boundary at {at:?}")]
    GridTooSmall { at: Vec<f64> },

    #[error("quadrature failed: achieved error estimate {achieved:e} above tolerance {tolerance:e}")]
    Quadrature { achieved: f64, tolerance: f64 },

    #[error("rejection sampling exhausted {attempts} attempts for density '{density}'")]
    Sampling { density: String, attempts: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
