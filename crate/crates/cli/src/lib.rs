//! Library side of the `vcvi` command: configuration, dataset ingest, run
//! and comparison artifacts and the oracle check manifest.

pub mod checks;
pub mod config;
pub mod ingest;
pub mod run;

/// Errors mapped to process exit codes by [`CliError::exit_code`].
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad configuration or arguments. Nothing has been written.
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("{0}")]
    Diverged(String),
    #[error("checks failed: {0}")]
    ChecksFailed(String),
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Diverged(_) => 3,
            CliError::ChecksFailed(_) | CliError::Other(_) => 1,
        }
    }
}
