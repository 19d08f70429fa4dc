use alloc::string::String;

/// Errors produced by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A hyperparameter or argument is outside its valid domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    /// Input data does not satisfy an operation's preconditions.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// A sampling window leaves the image.
    #[error("out of bounds: {0}")]
    OutOfBounds(String),
    /// Too few samples for an estimator.
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    /// The training objective became non-finite.
    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! invalid_param {
    ($($arg:tt)*) => { $crate::Error::InvalidParameter(alloc::format!($($arg)*)) };
}
macro_rules! invalid_input {
    ($($arg:tt)*) => { $crate::Error::InvalidInput(alloc::format!($($arg)*)) };
}
pub(crate) use invalid_input;
pub(crate) use invalid_param;
