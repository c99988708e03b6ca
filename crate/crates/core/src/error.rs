use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("model validation failed for `{model}`: {reason}")]
    ModelValidation { model: String, reason: String },

    #[error("non-finite state at internal step {step} (observation {observation})")]
    BlowUp { step: usize, observation: usize },

    #[error("grid too short: {what} needs {required} positions, got {available}")]
    Sizing {
        what: &'static str,
        required: usize,
        available: usize,
    },

    #[error("regime error: {0}")]
    Regime(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("velocities required for {0} but the grid has none")]
    MissingVelocities(&'static str),

    #[error("field estimate invalid or missing at: {0}")]
    InvalidField(String),

    #[error("replicate {replicate}: {source}")]
    Replicate {
        replicate: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name: name.to_string(),
        reason: reason.into(),
    }
}
