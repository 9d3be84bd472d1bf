use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Lib(#[from] spatial_lfdr::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Invalid(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 2 for bad input, 3 for numerical breakdowns, 1 for I/O.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Lib(e) if e.is_validation() => 2,
            CliError::Lib(_) => 3,
            CliError::Io { .. } => 1,
            CliError::Parse(_) | CliError::Invalid(_) => 2,
        }
    }
}
