//! Error types shared across the simulator.

use thiserror::Error;

/// Errors produced by simulator operations.
///
/// The split mirrors the CLI exit codes: configuration problems (bad config
/// files, unsatisfiable topologies, out-of-range knobs) map to exit code 2,
/// contract and invariant violations to exit code 3.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an operation's precondition (length mismatch,
    /// empty input, malformed arguments).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A configuration value is invalid or a configured scenario is
    /// unsatisfiable.
    #[error("configuration error: {0}")]
    Config(String),

    /// A runtime invariant failed mid-experiment (non-finite values,
    /// broken conservation laws).
    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn invariant(msg: impl Into<String>) -> Self {
        Error::Invariant(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
