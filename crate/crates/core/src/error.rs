use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the controller, its models and the simulation harness.
#[derive(Debug, Error)]
pub enum Error {
    /// An input violated a documented precondition (e.g. `vee` on a non-skew matrix).
    #[error("contract violation: {0}")]
    Contract(String),

    /// The input lies outside the domain of a map (e.g. `log_map` at an angle of π).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("manipulability {mu:.3e} is too small to differentiate")]
    GradientAtSingularity { mu: f64 },

    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("scenario validation failed: {0}")]
    Scenario(String),

    #[error("simulation aborted at record {record}: {message}")]
    Aborted { record: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
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
