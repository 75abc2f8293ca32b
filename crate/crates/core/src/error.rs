use thiserror::Error;

/// Errors raised by every module of the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("input error: {0}")]
    Input(String),
    #[error("capacity error: {what} is {got}, cap is {cap}")]
    Capacity {
        what: &'static str,
        got: usize,
        cap: usize,
    },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("numerical error: {message} (residual {residual:e})")]
    Numerical { message: String, residual: f64 },
    #[error("internal invariant violated: {0}")]
    Invariant(String),
    #[error("logic error: {0}")]
    Logic(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("algorithm contract violated: {0}")]
    Contract(String),
    #[error("oracle contract violated: {0}")]
    Oracle(String),
    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn logic(msg: impl Into<String>) -> Self {
        Error::Logic(msg.into())
    }
}
