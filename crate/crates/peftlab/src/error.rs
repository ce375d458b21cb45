use std::path::PathBuf;

/// Failures surfaced by the runner and CLI, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    /// Bad flags, config or ranges (exit 2).
    #[error("{0}")]
    Config(String),
    /// Failure while running (exit 3).
    #[error("{0}")]
    Runtime(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// A check that ran but did not pass (exit 1).
    #[error("{0}")]
    Check(String),
}

impl AppError {
    pub fn exit_code(&self) -> u8 {
        match self {
            AppError::Check(_) => 1,
            AppError::Config(_) => 2,
            AppError::Runtime(_) | AppError::Io { .. } => 3,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AppError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(e: impl std::fmt::Display) -> Self {
        AppError::Config(e.to_string())
    }

    pub fn runtime(e: impl std::fmt::Display) -> Self {
        AppError::Runtime(e.to_string())
    }
}

pub type AppResult<T> = Result<T, AppError>;
