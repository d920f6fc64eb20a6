//! Error type shared by every engine module.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HerError {
    #[error("width mismatch: expected {expected}, got {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("index {index} out of range for width {width}")]
    IndexOutOfRange { index: usize, width: usize },
    #[error("width {0} outside supported envelope 1..=65536")]
    UnsupportedWidth(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("learning requested on a non-plastic projector")]
    NotPlastic,
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("unknown symbol id {0}")]
    UnknownSymbol(u32),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("checkpoint version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: String, found: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HerError>;

impl HerError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        HerError::InvalidParameter(msg.into())
    }
}
