use thiserror::Error;

/// Errors raised by the solver suite.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A radius at or inside the horizon, or outside a solution's validity interval.
    #[error("domain error: {0}")]
    Domain(String),

    /// An invalid model, scenario or solver parameter.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// A NaN or infinity appeared during evaluation.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
