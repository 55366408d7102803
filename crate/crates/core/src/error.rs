use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the toolkit.
///
/// The command-line front end maps these onto process exit codes: usage
/// problems exit with 1, schema/validation problems with 2 and numeric
/// failures with 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("validation failed at {path}: {message}")]
    Validation { path: String, message: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn validation(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation { path: path.into(), message: message.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Process exit code: 1 usage/configuration, 2 validation, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation { .. } | Error::Json(_) | Error::Data(_) | Error::Csv(_) | Error::Shape { .. } => 2,
            Error::Numeric(_) => 3,
            Error::Config(_) | Error::Io { .. } => 1,
        }
    }
}
