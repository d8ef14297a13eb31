use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid attention row: {0}")]
    InvalidAttention(String),

    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Input {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("corrupt run log at record {record}: {message}")]
    CorruptLog { record: usize, message: String },

    #[error("latency undefined: {0}")]
    UndefinedLatency(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 1 for configuration problems, 2 for bad input.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Usage(_) => 1,
            _ => 2,
        }
    }
}
