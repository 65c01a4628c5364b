use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("config file {path}: {source}")]
    ConfigFile {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("checkpoint checksum mismatch (file truncated or corrupt)")]
    Checksum,

    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),

    #[error("malformed checkpoint: {0}")]
    Malformed(String),

    #[error("config hash mismatch: checkpoint was written with {found}, current config is {expected}")]
    ConfigHashMismatch { expected: String, found: String },

    #[error("protocol mismatch: {0}")]
    Protocol(String),

    #[error("unknown member {0}")]
    UnknownMember(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code for the CLI: 2 for usage/config problems, 3 for
    /// I/O and corruption.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::ConfigFile { .. }
            | Error::ConfigHashMismatch { .. }
            | Error::UnknownMember(_)
            | Error::DimensionMismatch { .. }
            | Error::Protocol(_) => 2,
            Error::Io { .. } | Error::Checksum | Error::UnsupportedVersion(_) | Error::Malformed(_) => 3,
        }
    }
}

pub(crate) fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}
