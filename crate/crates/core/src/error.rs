use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by the runtime API.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("resource exhausted: {0}")]
    ResourceExhausted(String),

    #[error("out of global memory: {0}")]
    OutOfGlobalMemory(String),

    #[error("caller is not a member of team {0}")]
    NotAMember(u32),

    #[error("runtime not initialized on this unit")]
    NotInitialized,

    #[error("RMA operation outside an open access epoch")]
    EpochViolation,

    #[error("invalid global pointer: {0}")]
    InvalidPointer(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid benchmark configuration: {0}")]
    InvalidConfig(String),

    #[error("unsupported operation: {0}")]
    Unsupported(&'static str),

    #[error("run aborted: a peer unit failed")]
    Poisoned,

    #[error("unit failures: {0}")]
    UnitFailures(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid_arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn invalid_ptr(msg: impl Into<String>) -> Self {
        Error::InvalidPointer(msg.into())
    }
}
