use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("time {t} outside episode [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("invalid load profile: {0}")]
    InvalidProfile(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),

    #[error("bad value for `{key}`: {value:?}")]
    BadValue { key: String, value: String },

    #[error("clock cannot move backwards from {now} to {to}")]
    BackwardsTime { now: f64, to: f64 },

    #[error("agent {0} submitted more than one scaling request")]
    DuplicateRequest(usize),

    #[error("agent index {0} out of range")]
    UnknownAgent(usize),

    #[error("infeasible allocation: {0}")]
    Infeasible(String),

    #[error("target utilization must be positive, got {0}")]
    NonPositiveTarget(f64),

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("q-table shape mismatch: expected {expected} rows, found {found}")]
    ShapeMismatch { expected: usize, found: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
