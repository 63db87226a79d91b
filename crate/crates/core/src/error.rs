use std::path::PathBuf;

use thiserror::Error;

use crate::cmdp::PrivilegedState;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (unknown state, bad action index, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("state {0} is not known to this table")]
    UnknownState(PrivilegedState),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("state-space closure exceeded the cap of {cap} states")]
    StateCap { cap: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("off-policy batch: trajectory snapshot {found:?} does not match policy snapshot {expected}")]
    OffPolicy { expected: u64, found: Option<u64> },

    #[error("unsupported file format version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },

    #[error("malformed file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error("runs are not comparable: {0}")]
    Mismatch(String),

    #[error("run failed: {0}")]
    Runtime(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
