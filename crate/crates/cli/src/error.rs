use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Model(#[from] umcast::Error),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{}: not a valid document: {source}", path.display())]
    Parse { path: PathBuf, source: serde_json::Error },

    #[error("check failed: {0}")]
    Check(String),

    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    /// 0 success, 1 validation or infeasibility, 2 I/O, 3 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Parse { .. } | CliError::Check(_) => 1,
            CliError::Model(umcast::Error::Csv(e)) if e.is_io_error() => 2,
            CliError::Model(_) => 1,
            CliError::Io { .. } => 2,
            CliError::Internal(_) => 3,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

pub type CliResult<T> = Result<T, CliError>;
