use std::path::PathBuf;

use qnbo::{Phase, QnboError};
use thiserror::Error;

pub type Result<T, E = BenchError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("config error in {path}: {message}")]
    Config { path: String, message: String },

    #[error("numerical failure ({phase}) in run '{run}': {source}")]
    Numerical {
        run: String,
        phase: Phase,
        #[source]
        source: QnboError,
    },

    #[error("solver error in run '{run}': {source}")]
    Solver {
        run: String,
        #[source]
        source: QnboError,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl BenchError {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        BenchError::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        BenchError::Io {
            path: path.into(),
            source,
        }
    }

    /// Sorts a library error into the exit-code classes.
    pub fn from_solver(run: &str, source: QnboError) -> Self {
        match source {
            QnboError::NumericalFailure { phase, .. } => BenchError::Numerical {
                run: run.to_string(),
                phase,
                source,
            },
            QnboError::Io(e) => BenchError::io(run, e),
            QnboError::InvalidArgument(_)
            | QnboError::Precondition(_)
            | QnboError::Unsupported(_)
            | QnboError::Parse { .. } => BenchError::config(run, source.to_string()),
            other => BenchError::Solver {
                run: run.to_string(),
                source: other,
            },
        }
    }

    /// 2 for configuration problems, 3 for numerical failures, 4 for IO.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config { .. } => 2,
            BenchError::Numerical { .. } | BenchError::Solver { .. } => 3,
            BenchError::Io { .. } => 4,
        }
    }
}
