use thiserror::Error;

/// Errors raised anywhere in the quantification pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure in {context}{}", .step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NumericalFailure { context: String, step: Option<usize> },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn numerical(context: impl Into<String>, step: Option<usize>) -> Self {
        Error::NumericalFailure { context: context.into(), step }
    }

    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format { offset, message: message.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
