use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: row {row}: {reason}")]
    Parse {
        path: String,
        row: usize,
        reason: String,
    },

    #[error("integrity violation: {0}")]
    Integrity(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("rank-deficient design; dependent columns: {}", .columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("record is not scorable (status {0})")]
    NotScorable(&'static str),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("invalid split plan: {0}")]
    Plan(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("provider authentication failed: {0}")]
    ProviderAuth(String),

    #[error("provider error: {0}")]
    Provider(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl AsRef<std::path::Path>, row: usize, reason: impl ToString) -> Self {
        Error::Parse {
            path: path.as_ref().display().to_string(),
            row,
            reason: reason.to_string(),
        }
    }

    /// Process exit code for the command-line driver: 2 input, 3 provider, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ProviderAuth(_) | Error::Provider(_) => 3,
            Error::RankDeficient { .. } | Error::Numerical(_) | Error::UndefinedMetric(_) => 4,
            _ => 2,
        }
    }
}
