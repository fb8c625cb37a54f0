use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("{path}: wrong IDX magic 0x{found:08X}")]
    IdxWrongMagic { path: PathBuf, found: u32 },

    #[error("{path}: truncated IDX payload (expected {expected} bytes, found {found})")]
    IdxTruncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("{path}: IDX dimensions overflow the address space")]
    IdxDimensionOverflow { path: PathBuf },

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("corrupt checkpoint: {0}")]
    CheckpointCorrupt(String),

    #[error("checkpoint is missing field `{0}`")]
    CheckpointMissing(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::LabelOutOfRange { .. } => 1,
            Error::NonFinite(_) => 3,
            _ => 2,
        }
    }
}
