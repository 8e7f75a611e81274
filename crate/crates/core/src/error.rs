use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("no backward rule for op `{0}`")]
    NoBackward(&'static str),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("not a flo file")]
    NotFlo,
    #[error("corrupt flo: {0}")]
    CorruptFlo(String),
    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    /// Coarse classification used for process exit codes and FFI status codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Numeric(_) => ErrorKind::Numeric,
            Error::Config(_) => ErrorKind::Usage,
            _ => ErrorKind::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numeric,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Usage => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numeric => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::Usage => "usage",
            ErrorKind::Data => "data",
            ErrorKind::Numeric => "numeric",
        }
    }
}
