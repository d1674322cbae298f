use thiserror::Error;

/// Errors raised by model construction, fitting, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// An evaluation point lies outside the supported domain.
    #[error("domain error: {0}")]
    Domain(String),
    /// A caller supplied an invalid argument (dimension, order, layout).
    #[error("argument error: {0}")]
    Argument(String),
    /// Input data violate a precondition (too few observations, bad schema).
    #[error("data error: {0}")]
    Data(String),
    /// A numerical routine failed or produced non-finite output.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// A configuration file or value is malformed.
    #[error("config error: {0}")]
    Config(String),
    /// Sampling could not start or broke down (no finite initial point,
    /// persistent divergence).
    #[error("fit failure: {0}")]
    FitFailure(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
