use std::path::PathBuf;

use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("missing artifact {path}: {hint}")]
    MissingArtifact { path: PathBuf, hint: &'static str },
    #[error("pipeline integrity: {0}")]
    Integrity(String),
    #[error(transparent)]
    Core(#[from] covkernel::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// Process exit status; 2 is shared with argument errors.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Json(_) => 2,
            CliError::Core(covkernel::Error::InvalidConfig(_)) => 2,
            CliError::Core(covkernel::Error::Io(_)) | CliError::Io { .. } => 6,
            CliError::Core(_) => 3,
            CliError::MissingArtifact { .. } => 4,
            CliError::Integrity(_) => 5,
        }
    }
}
