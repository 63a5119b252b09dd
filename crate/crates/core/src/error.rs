use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    /// Bad magic bytes, unknown version or unsupported dtype.
    #[error("format error: {0}")]
    Format(String),

    /// Header and payload disagree.
    #[error("corrupt file: {0}")]
    Corruption(String),

    /// A value or shape violates a documented invariant.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Two artifacts were produced under different settings and cannot be compared.
    #[error("incomparable inputs: {0}")]
    Comparability(String),

    #[error("lookup failed: {0}")]
    Lookup(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the content of a data file rather than by the
    /// invocation or the environment.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Format(_)
                | Error::Corruption(_)
                | Error::Validation(_)
                | Error::DegenerateInput(_)
                | Error::Comparability(_)
                | Error::Shape(_)
        )
    }
}
