//! Error taxonomy shared by the library and the CLI.
//!
//! Variants are grouped by *who got it wrong*: `Config` for bad parameters,
//! `Input` for bad values handed to an otherwise valid object, `Data` for
//! problems with an external data feed, `Protocol` for violations of the live
//! monitoring handshake, `State` for calls that are illegal in the current
//! detector state, and `Calibration` for searches that could not converge.
//! The CLI maps each group to a distinct exit code.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, TssrpError>;

#[derive(Debug, Error)]
pub enum TssrpError {
    /// A configuration value violates an invariant (e.g. `q > K`).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A runtime input is out of domain (e.g. a non-finite observation).
    #[error("invalid input: {0}")]
    Input(String),

    /// An external data source misbehaved (missing stream, early end of feed).
    #[error("data error: {0}")]
    Data(String),

    /// The live monitoring protocol was violated (e.g. out-of-order records).
    #[error("protocol error: {0}")]
    Protocol(String),

    /// An operation was applied in a state that forbids it (e.g. stepping a
    /// detector that has already raised an alarm).
    #[error("invalid state: {0}")]
    State(String),

    /// Threshold search failed to bracket or converge.
    #[error("calibration failed: {0}")]
    Calibration(String),

    /// A data source ended before the run reached an alarm or its horizon.
    /// Carries the partial result so callers can still inspect the prefix.
    #[error("data source exhausted at t={t} before alarm or horizon")]
    SourceExhausted {
        t: u64,
        partial: Box<crate::detector::RunResult>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("malformed JSON record: {0}")]
    Json(#[from] serde_json::Error),
}

impl TssrpError {
    pub fn config(msg: impl Into<String>) -> Self {
        TssrpError::Config(msg.into())
    }

    pub fn input(msg: impl Into<String>) -> Self {
        TssrpError::Input(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        TssrpError::Data(msg.into())
    }

    pub fn protocol(msg: impl Into<String>) -> Self {
        TssrpError::Protocol(msg.into())
    }

    pub fn state(msg: impl Into<String>) -> Self {
        TssrpError::State(msg.into())
    }

    pub fn calibration(msg: impl Into<String>) -> Self {
        TssrpError::Calibration(msg.into())
    }
}
