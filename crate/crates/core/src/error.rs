use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("signals are misaligned: {0}")]
    Alignment(String),

    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("undetectable rhythm: {peaks} R-peak(s) found, need at least 2")]
    UndetectableRhythm { peaks: usize },

    #[error("no valid windows: all {skipped} window(s) were skipped")]
    NoValidWindows { skipped: usize },

    #[error("numeric error{}: {msg}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    Numeric { msg: String, step: Option<usize> },

    #[error("version mismatch: {0}")]
    Version(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>, step: Option<usize>) -> Self {
        Error::Numeric {
            msg: msg.into(),
            step,
        }
    }
}
