use std::path::PathBuf;

use thiserror::Error;

/// Failure categories, each with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric failure in {stage}: {source}")]
    Numeric {
        stage: &'static str,
        #[source]
        source: freqmix_core::Error,
    },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("run in {0} is incomplete; rerun it before extracting plot data")]
    IncompleteRun(PathBuf),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::IncompleteRun(_) => 2,
            CliError::Numeric { .. } => 3,
            CliError::Io { .. } => 4,
        }
    }

    pub fn category(&self) -> &'static str {
        match self {
            CliError::Config(_) | CliError::IncompleteRun(_) => "config",
            CliError::Numeric { .. } => "numeric",
            CliError::Io { .. } => "io",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn numeric(stage: &'static str, e: impl Into<freqmix_core::Error>) -> Self {
        CliError::Numeric {
            stage,
            source: e.into(),
        }
    }
}
