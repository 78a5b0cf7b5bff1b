use std::path::{Path, PathBuf};

use thiserror::Error;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] anomaly_forge_core::Error),

    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Core(anomaly_forge_core::Error::Io { path: PathBuf::from(path), source })
    }

    pub fn json(path: &Path, source: serde_json::Error) -> Self {
        CliError::Core(anomaly_forge_core::Error::Json { path: PathBuf::from(path), source })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Usage(_) => "usage",
        }
    }

    /// One-line JSON object for the error stream.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self.kind(), "message": self.to_string() }).to_string()
    }
}
