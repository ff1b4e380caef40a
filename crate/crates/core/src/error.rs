use thiserror::Error;

/// Errors raised by the detection toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("decode error: {0}")]
    Decode(String),

    /// The reliability-enforcement loop hit its round cap without the
    /// observed reliability reaching the target.
    #[error("phase 2 saturated: observed reliability {observed:.6} < {target} after {rounds} rounds")]
    Saturation {
        rounds: u32,
        observed: f64,
        target: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
