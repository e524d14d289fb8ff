use std::io;
use std::path::PathBuf;

use crate::runner::RunnerError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] cascade_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Records {
        path: PathBuf,
        #[source]
        source: cascade_core::Error,
    },
    #[error("{path}: unexpected header column {index}: expected `{expected}`, found `{found}`")]
    Schema {
        path: PathBuf,
        index: usize,
        expected: String,
        found: String,
    },
    #[error("configuration: {0}")]
    Config(String),
    #[error("stage {stage}{}: {source}", sample.as_ref().map(|s| format!(" (sample `{s}`)")).unwrap_or_default())]
    Runner {
        stage: usize,
        sample: Option<String>,
        #[source]
        source: RunnerError,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for usage/configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Core(e) if is_config_error(e) => 2,
            Error::Runner {
                source: RunnerError::NameMismatch { .. },
                ..
            } => 2,
            _ => 1,
        }
    }
}

fn is_config_error(e: &cascade_core::Error) -> bool {
    use cascade_core::Error as E;
    matches!(
        e,
        E::UnknownModel(_)
            | E::ChainTooShort(_)
            | E::ThresholdCount { .. }
            | E::ThresholdOutOfRange(_)
            | E::EmptyGrid
            | E::UnsortedGrid(_)
            | E::ZeroBins
            | E::QuantileOutOfRange(_)
            | E::NonFiniteTolerance(_)
            | E::ChainMismatch { .. }
    )
}
