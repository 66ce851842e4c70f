use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid probability input: {0}")]
    Domain(String),

    /// Recovered `p(s_y = 0)` fell below the allowed tolerance.
    #[error("inconsistent P matrix: recovered d_0 = {d0:.6} is below -{tolerance}")]
    Inconsistent { d0: f64, tolerance: f64 },

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid partition: {0}")]
    Partition(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by malformed or mismatched input data.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Dimension(_)
                | Error::Parse { .. }
                | Error::Partition(_)
                | Error::Io(_)
                | Error::Json(_)
                | Error::Config(_)
        )
    }
}
