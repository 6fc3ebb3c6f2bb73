use std::path::PathBuf;

/// Errors produced by the reduced basis library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("parameter outside the admissible box: {0}")]
    OutOfBounds(String),

    #[error("matrix is not positive definite ({0})")]
    NotPositiveDefinite(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("iterative solver did not converge after {iterations} iterations (relative residual {residual:.3e}, target {target:.3e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        target: f64,
    },

    #[error("memory budget exceeded: {what} needs {required} entries, budget is {budget}")]
    Budget {
        what: &'static str,
        required: usize,
        budget: usize,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("integrity check failed for {path}: {reason}")]
    Integrity { path: PathBuf, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(context: &'static str, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch { context, expected, got }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
