use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid regime parameter r = {0} (must be > 0)")]
    InvalidRegime(f64),

    #[error("control {value} outside [-1, 1]")]
    ControlBound { value: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("insufficient history: {0}")]
    InsufficientHistory(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("trajectory too short for segment: need {needed} steps, have {available}")]
    Segment { needed: usize, available: usize },

    #[error("parse error in {path}{}: {msg}", location.map(|l| format!(" (record {l})")).unwrap_or_default())]
    Parse {
        path: PathBuf,
        location: Option<usize>,
        msg: String,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, location: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            location,
            msg: msg.into(),
        }
    }

    /// Coarse category used by the CLI for exit codes and messages.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidRegime(_) | Error::Config(_) | Error::ControlBound { .. } => "config",
            Error::Dimension { .. } | Error::Segment { .. } | Error::InsufficientHistory(_) => "shape",
            Error::Parse { .. } | Error::Format(_) => "format",
            Error::Diverged(_) => "numerics",
            Error::Empty(_) => "input",
            Error::Contract(_) => "contract",
            Error::Io { .. } => "io",
        }
    }
}

/// Rejects controls outside the admissible interval.
pub(crate) fn check_control(u: f64) -> Result<()> {
    if !(-1.0..=1.0).contains(&u) || u.is_nan() {
        return Err(Error::ControlBound { value: u });
    }
    Ok(())
}
