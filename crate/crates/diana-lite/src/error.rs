//! Error type shared across the crate.

use std::fmt;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes surfaced by the library.
#[derive(Debug)]
pub enum Error {
    /// A configuration value is out of range or inconsistent.
    Config(String),
    /// Input data violates a format invariant (e.g. gold answer missing
    /// from the candidate set).
    Data(String),
    /// Feature encoding received an empty or degenerate input.
    Encoding(String),
    /// A routing decision could not be made (unknown task id, empty key set).
    Routing(String),
    /// An internal invariant was violated; indicates a bug, not bad input.
    Invariant(String),
    /// Scoring was asked to work on an empty candidate set.
    Scoring(String),
    /// Threshold calibration received no distances.
    Calibration(String),
    /// A metric could not be computed from the performance matrix.
    Evaluation(String),
    /// Filesystem failure.
    Io(std::io::Error),
    /// JSON (de)serialization failure.
    Json(serde_json::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Data(msg) => write!(f, "data error: {msg}"),
            Error::Encoding(msg) => write!(f, "encoding error: {msg}"),
            Error::Routing(msg) => write!(f, "routing error: {msg}"),
            Error::Invariant(msg) => write!(f, "invariant violation: {msg}"),
            Error::Scoring(msg) => write!(f, "scoring error: {msg}"),
            Error::Calibration(msg) => write!(f, "calibration error: {msg}"),
            Error::Evaluation(msg) => write!(f, "evaluation error: {msg}"),
            Error::Io(err) => write!(f, "io error: {err}"),
            Error::Json(err) => write!(f, "json error: {err}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(err) => Some(err),
            Error::Json(err) => Some(err),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err)
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Json(err)
    }
}

impl Error {
    /// Process exit code for the CLI: 2 for data/config problems,
    /// 3 for internal invariant violations.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Invariant(_) | Error::Routing(_) | Error::Scoring(_) => 3,
            _ => 2,
        }
    }
}
