use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    /// Invalid, incomplete or unreadable configuration. `key` names the offending entry.
    #[error("config error: {key}: {message}")]
    Config { key: String, message: String },

    /// A report or artifact that could not be parsed.
    #[error("parse error in {}: {message}", path.display())]
    Parse { path: PathBuf, message: String },

    /// Recovery ran out of rounds for at least one run.
    #[error("recovery did not converge: {0}")]
    NonConvergence(String),

    #[error(transparent)]
    Core(#[from] fedquit_core::Error),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 config, 2 runtime, 3 non-convergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Parse { .. } => 1,
            CliError::NonConvergence(_) => 3,
            CliError::Core(_) | CliError::Io { .. } | CliError::Runtime(_) => 2,
        }
    }
}
