use thiserror::Error;

#[derive(Debug, Error)]
pub enum FppError {
    /// Malformed configuration or input file; the string names the offending field.
    #[error("config error at {field}: {msg}")]
    Config { field: String, msg: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A postcondition or invariant check failed at runtime.
    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("empty lattice domain: {0}")]
    EmptyDomain(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl FppError {
    pub fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        FppError::Config { field: field.into(), msg: msg.into() }
    }

    pub fn pre(msg: impl Into<String>) -> Self {
        FppError::Precondition(msg.into())
    }

    pub fn invariant(msg: impl Into<String>) -> Self {
        FppError::Invariant(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, FppError>;
