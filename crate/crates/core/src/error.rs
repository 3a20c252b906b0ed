use thiserror::Error;

/// Errors raised by the numeric kernels, maps, copulas and the engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum VcviError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    Spec(String),

    #[error("optimization diverged after {consecutive} consecutive non-finite steps (last good step {step})")]
    Diverged { consecutive: usize, step: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, VcviError>;

pub(crate) fn domain(msg: impl Into<String>) -> VcviError {
    VcviError::Domain(msg.into())
}

pub(crate) fn dimension(msg: impl Into<String>) -> VcviError {
    VcviError::Dimension(msg.into())
}

pub(crate) fn spec(msg: impl Into<String>) -> VcviError {
    VcviError::Spec(msg.into())
}
