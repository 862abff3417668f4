use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent physical / network configuration.
    #[error("configuration error: {0}")]
    Config(String),
    /// Input data violates a documented precondition.
    #[error("validation error: {0}")]
    Validation(String),
    /// Tensor shapes do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// Non-finite values or divergence.
    #[error("numerical error: {0}")]
    Numerical(String),
    /// Ground-truth annotations inconsistent with the target maps.
    #[error("annotation error: {0}")]
    Annotation(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
    pub(crate) fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
