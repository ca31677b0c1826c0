use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("time {time} is not a node of the grid (spacing {spacing})")]
    OffGrid { time: f64, spacing: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("integration of mode {mode} is unstable: {detail}")]
    Unstable { mode: u32, detail: String },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
