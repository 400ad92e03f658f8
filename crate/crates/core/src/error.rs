use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the planning, simulation and I/O layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("trajectories are not time-aligned: {0}")]
    Misaligned(String),

    #[error("distribution is degenerate: every weight/base-probability product is zero")]
    DegenerateDistribution,

    #[error("time {t} s is outside the trajectory horizon [{start}, {end}] s")]
    OutsideHorizon { t: f64, start: f64, end: f64 },

    #[error("index out of range: {0}")]
    Index(String),

    #[error("game too large for exhaustive enumeration: {profiles} pure profiles (limit {limit})")]
    GameTooLarge { profiles: u128, limit: u128 },

    #[error("no proposals: {0}")]
    NoProposals(String),

    #[error("parse error at {path}: {message}")]
    Parse { path: String, message: String },

    #[error("validation error at {path}: {message}")]
    Validation { path: String, message: String },

    #[error("unsupported schema_version {found} (supported: {supported})")]
    SchemaVersion { found: String, supported: u32 },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn validation(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by bad input files or arguments, as opposed to
    /// failures during planning or I/O.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::Parse { .. }
                | Error::Validation { .. }
                | Error::SchemaVersion { .. }
                | Error::GameTooLarge { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
