//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors emitted by the simulator core.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration: mismatched shapes, unknown schemes, bad parameters.
    #[error("configuration error: {0}")]
    Config(String),

    /// Invalid runtime input: malformed labels, empty frames, shape mismatches.
    #[error("input error: {0}")]
    Input(String),

    /// Non-finite values produced during a numeric pass.
    #[error("numeric error in {context}: {message}")]
    Numeric { context: String, message: String },

    /// Malformed dataset or checkpoint file.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// A device-local failure inside a federated round.
    #[error("device {device} failed in round {round}: {source}")]
    Round {
        device: usize,
        round: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn numeric(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Numeric {
            context: context.into(),
            message: message.into(),
        }
    }

    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }
}
