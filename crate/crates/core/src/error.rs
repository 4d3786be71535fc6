use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("invalid contraction: r = {r} with orders {n} and {m}")]
    InvalidContraction { r: usize, n: usize, m: usize },
    #[error("chaos order {needed} exceeds the order budget {budget}")]
    OrderBudget { needed: usize, budget: usize },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("domain violation: {0}")]
    Domain(String),
    #[error("precondition refused: {0}")]
    Refused(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn refused(msg: impl Into<String>) -> Self {
        Error::Refused(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
