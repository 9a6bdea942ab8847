use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A model, scene or problem violates one of its structural invariants.
    #[error("configuration error: {0}")]
    Config(String),

    /// A config field failed validation; `field` is the dotted path.
    #[error("invalid field `{field}`: {reason}")]
    Field { field: String, reason: String },

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    Dimension {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    /// Two end-effectors coincide, so the collision normal is undefined.
    #[error("degenerate collision geometry: end-effector distance {distance:e} m")]
    DegenerateGeometry { distance: f64 },

    #[error("invalid argument: {0}")]
    Argument(String),

    /// The Metropolis chain barely moves; the proposal width is wrong for the prior.
    #[error("MCMC tuning error: acceptance rate {rate:.4} over {proposals} proposals")]
    Tuning { rate: f64, proposals: usize },

    #[error("gaussian process fit failed: {0}")]
    Fit(String),

    #[error("too many deadlocked trials: {deadlocked} of {attempted}")]
    Deadlock { deadlocked: usize, attempted: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn field(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Field {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
