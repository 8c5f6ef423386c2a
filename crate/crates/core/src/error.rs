use thiserror::Error;

use crate::model::ValidationReport;

/// Errors raised by the solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(ValidationReport),

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: String,
        found: String,
    },

    #[error("matrix {0} is not invertible")]
    Singular(&'static str),

    #[error("invalid time grid: {0}")]
    Grid(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The partial solution on `[t_valid_from, T]` is available from the
    /// solver that raised this error.
    #[error("Riccati solution blew up at t = {time} (norm {norm:.3e} exceeds {threshold:.3e})")]
    Blowup { time: f64, norm: f64, threshold: f64, valid_from: usize },

    #[error("terminal payoff is not finite at lattice node (w1 = {w1}, w2 = {w2})")]
    NonFinitePayoff { w1: f64, w2: f64 },

    #[error("lattice value overflow at step {step}, node ({i}, {j})")]
    Overflow { step: usize, i: usize, j: usize },

    #[error("no usable Monte Carlo samples ({excluded} excluded)")]
    EmptySample { excluded: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
