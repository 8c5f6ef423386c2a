use std::path::Path;

use thiserror::Error;

/// Process exit statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success = 0,
    /// Bad input, or a check ran and failed.
    ValidationFailure = 1,
    /// Riccati blow-up, lattice overflow or another numerical breakdown.
    NumericalFailure = 2,
    /// Monte Carlo result too noisy or too heavy-tailed to decide.
    Inconclusive = 3,
}

impl Outcome {
    pub fn code(self) -> i32 {
        self as i32
    }

    /// The more severe of two outcomes, ordered success < inconclusive <
    /// validation < numerical.
    pub fn worst(self, other: Outcome) -> Outcome {
        let rank = |o: Outcome| match o {
            Outcome::Success => 0,
            Outcome::Inconclusive => 1,
            Outcome::ValidationFailure => 2,
            Outcome::NumericalFailure => 3,
        };
        if rank(other) > rank(self) {
            other
        } else {
            self
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("model file {path}: {message}")]
    ModelFile { path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] asymrisk::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }

    pub fn outcome(&self) -> Outcome {
        use asymrisk::Error as E;
        match self {
            CliError::Core(E::Blowup { .. } | E::Overflow { .. } | E::NonFinitePayoff { .. }) => {
                Outcome::NumericalFailure
            }
            CliError::Core(E::EmptySample { .. }) => Outcome::Inconclusive,
            _ => Outcome::ValidationFailure,
        }
    }
}
