use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong between reading an input file and writing a report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unable to access '{path}': {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{path}: schema error: {message}")]
    Schema { path: PathBuf, message: String },
    #[error("invalid value: {0}")]
    Invalid(String),
    #[error("missing factor entry '{0}'")]
    MissingFactor(String),
    #[error("unknown vehicle label '{label}' (valid labels: {valid})")]
    UnknownLabel { label: String, valid: String },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("no speed available for site '{site}': {hint}")]
    NoSpeed { site: String, hint: String },
    #[error("training data leakage: {0}")]
    Leakage(String),
    #[error("training diverged (non-finite loss) after last stable epoch {last_stable_epoch}")]
    Divergence { last_stable_epoch: usize },
    #[error("road type mismatch: weights trained for {trained}, requested {requested}")]
    RoadTypeMismatch { trained: String, requested: String },
    #[error("prediction/truth keys differ: {0}")]
    KeyMismatch(String),
    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn schema(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    ///
    /// 2 validation, 3 speed estimation failure, 4 leakage guard, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. }
            | Error::Schema { .. }
            | Error::Invalid(_)
            | Error::MissingFactor(_)
            | Error::UnknownLabel { .. }
            | Error::Empty(_)
            | Error::Shape(_)
            | Error::RoadTypeMismatch { .. }
            | Error::KeyMismatch(_)
            | Error::Config(_) => 2,
            Error::NoSpeed { .. } => 3,
            Error::Leakage(_) => 4,
            Error::Io { .. } | Error::Degenerate(_) | Error::Divergence { .. } => 1,
        }
    }
}
