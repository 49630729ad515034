use thiserror::Error;

pub type Result<T> = std::result::Result<T, HewError>;

#[derive(Debug, Error)]
pub enum HewError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn domain(msg: impl Into<String>) -> HewError {
    HewError::Domain(msg.into())
}

pub(crate) fn precondition(msg: impl Into<String>) -> HewError {
    HewError::Precondition(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> HewError {
    HewError::Config(msg.into())
}
