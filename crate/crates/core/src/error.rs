use std::io;

use thiserror::Error;

/// Errors raised anywhere in the encoder, trainer or persistence layers.
#[derive(Debug, Error)]
pub enum RanError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("state error: {0}")]
    State(String),
    #[error("mask error: {0}")]
    Mask(String),
    #[error("precondition error: {0}")]
    Precondition(String),
    #[error("data error at line {line}: {message}")]
    Data { line: usize, message: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("gradient check failed: {0}")]
    GradCheck(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl RanError {
    pub fn dim(msg: impl Into<String>) -> Self {
        RanError::Dimension(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        RanError::Config(msg.into())
    }

    pub fn data(line: usize, msg: impl Into<String>) -> Self {
        RanError::Data {
            line,
            message: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, RanError>;
