use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("point {x} lies outside the domain ({lower}, {upper})")]
    Domain { x: f64, lower: f64, upper: f64 },

    #[error("value {0} is outside the range of the scale function")]
    Range(f64),

    #[error("level {level} is too fine for n = {n} ({reason})")]
    Level { level: u32, n: usize, reason: &'static str },

    #[error("path exited the state space at fine step {step}; refusing to use it")]
    ExitedPath { step: usize },

    #[error("insufficient resolution: need at least {required} fine intervals, have {available}")]
    Resolution { required: usize, available: usize },

    #[error("plan/observation mismatch: {0}")]
    Mismatch(String),

    #[error("missing data: {0}")]
    Missing(String),

    #[error("experiment aborted: {0}")]
    Aborted(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}
