use std::path::{Path, PathBuf};

use thiserror::Error;

/// Failure classes of the pipeline, each with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// A required checkpoint or input artifact does not exist.
    #[error("missing input {}: {hint}", path.display())]
    Missing { path: PathBuf, hint: String },

    #[error("normal fusion failed: {0}")]
    Fusion(volcap::Error),

    #[error("reconstruction produced an empty surface")]
    EmptyReconstruction,

    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] volcap::Error),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Missing { .. } => 2,
            CliError::Fusion(_) => 3,
            CliError::EmptyReconstruction => 4,
            _ => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Fails with [`CliError::Missing`] unless every path exists.
pub fn require(paths: &[&Path], hint: &str) -> CliResult<()> {
    match paths.iter().find(|p| !p.exists()) {
        Some(p) => Err(CliError::Missing { path: p.to_path_buf(), hint: hint.to_string() }),
        None => Ok(()),
    }
}
