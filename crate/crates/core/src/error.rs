use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input failed a structural or numerical validity check.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A displacement pushed too much norm past the Fock-basis cutoff.
    #[error("truncation error: {what} loses {deficit:.3e} of its norm (limit {limit:.1e})")]
    Truncation {
        what: String,
        deficit: f64,
        limit: f64,
    },

    #[error("grid resolution error: {0}")]
    Resolution(String),

    #[error(
        "solver did not converge after {iterations} iterations \
         (primal residual {primal_residual:.3e}, gap {gap:.3e})"
    )]
    NonConvergence {
        iterations: usize,
        primal_residual: f64,
        gap: f64,
        /// Best feasible objective recorded at each certificate check.
        history: Vec<f64>,
    },

    #[error("ill-conditioned problem: {what} (condition estimate {condition:.3e})")]
    IllConditioned { what: String, condition: f64 },

    #[error("size limit exceeded: {0}")]
    Size(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
