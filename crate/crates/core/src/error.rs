use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("model file error: {0}")]
    ModelFile(String),

    #[error("enumeration space too large: {size:.3e} assignments exceeds limit {limit:.0e}")]
    SpaceTooLarge { size: f64, limit: f64 },

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

    /// True for errors caused by bad user input rather than runtime failure.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. } | Error::Schema(_) | Error::Validation(_) | Error::SpaceTooLarge { .. }
        )
    }
}
