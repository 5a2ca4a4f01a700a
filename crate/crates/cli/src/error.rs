use std::path::PathBuf;

use swgame::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Config {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    /// Errors from loading the problem file.
    #[error("{path}: {source}")]
    Problem {
        path: PathBuf,
        #[source]
        source: Error,
    },
    #[error(transparent)]
    Solver(#[from] Error),
    /// A validator or cross-check reported a failure.
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 1 for domain failures, 2 for usage, I/O and parse failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Io { .. } | CliError::Config { .. } | CliError::Problem { .. } => 2,
            CliError::Solver(e) => match e {
                Error::Expr { .. }
                | Error::MalformedSpec(_)
                | Error::InvalidParameter(_)
                | Error::Io(_)
                | Error::Json(_) => 2,
                _ => 1,
            },
            CliError::Failed(_) => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
