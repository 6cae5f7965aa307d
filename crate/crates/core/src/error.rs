use thiserror::Error;

/// Errors raised anywhere in the fusion / attack / analysis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A state, transition or measurement carried NaN or infinite entries.
    #[error("non-finite numeric input: {0}")]
    NumericInput(String),

    /// A matrix that must be inverted (innovation covariance) is singular.
    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    /// Structured validation failure; `path` names the offending field.
    #[error("{path}: {message}")]
    Validation { path: String, message: String },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// A caller-supplied callback broke its contract.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn validation(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
