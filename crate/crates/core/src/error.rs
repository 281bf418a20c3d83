use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration, unknown tag or failed precondition on a
    /// user-supplied value.
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// Invalid runtime input, such as a non-finite action.
    #[error("invalid input: {0}")]
    Input(String),
    #[error("non-finite value at node {node} ({op})")]
    Numeric { node: usize, op: &'static str },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Dimension(_) | Error::Checkpoint(_) => 2,
            Error::Numeric { .. } => 3,
            Error::Input(_) | Error::Io(_) => 1,
        }
    }
}
