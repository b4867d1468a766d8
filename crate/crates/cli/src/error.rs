use std::path::Path;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(smcmc::Error),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// Process exit code: 2 for configuration errors, 3 for numerical
    /// failures, 1 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io { .. } => 1,
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn csv(path: &Path, err: csv::Error) -> Self {
        match err.into_kind() {
            csv::ErrorKind::Io(e) => Self::io(path, e),
            other => CliError::Config(format!("{}: {other:?}", path.display())),
        }
    }
}

impl From<smcmc::Error> for CliError {
    fn from(e: smcmc::Error) -> Self {
        match e {
            smcmc::Error::InvalidConfig(msg) => CliError::Config(msg),
            e @ smcmc::Error::DimensionMismatch { .. } => CliError::Config(e.to_string()),
            e => CliError::Numerical(e),
        }
    }
}
