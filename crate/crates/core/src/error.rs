use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad user input or a violated precondition.
    #[error("invalid input: {0}")]
    Input(String),

    /// Conditional variance collapsed for observation `index` (position in the ordering).
    #[error("numerical degeneracy at observation {index}: conditional variance {variance:e}")]
    Degenerate { index: usize, variance: f64 },

    #[error("matrix is not positive definite (pivot {pivot}, value {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("correction distribution failed certification: sup-error {sup_error:.4} > {threshold}")]
    Certification { sup_error: f64, threshold: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// Process exit code: 2 validation, 3 numerical, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_) | Error::Parse { .. } => 2,
            Error::Degenerate { .. }
            | Error::NotPositiveDefinite { .. }
            | Error::Numerical(_)
            | Error::Certification { .. } => 3,
            Error::Io { .. } => 4,
            Error::AtIteration { source, .. } => source.exit_code(),
        }
    }
}
