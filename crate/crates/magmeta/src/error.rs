use thiserror::Error;

/// Library-wide error type.
///
/// `Domain` marks arguments outside a function's mathematical domain,
/// `Data` marks structurally invalid inputs (bad CSV rows, empty study
/// sets, inconsistent lengths), and `Convergence` marks iterative
/// routines that exhausted their budget. The distinction matters at the
/// CLI boundary: usage problems exit 1, data problems exit 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("convergence failure: {0}")]
    Convergence(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn convergence(msg: impl Into<String>) -> Self {
        Error::Convergence(msg.into())
    }
}
