use thiserror::Error;

/// Errors raised by the simulator.
///
/// The CLI maps [`BellError::Config`] and [`BellError::Domain`] to exit code 1
/// and [`BellError::Numeric`] to exit code 2.
#[derive(Debug, Error)]
pub enum BellError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl BellError {
    pub fn domain(msg: impl Into<String>) -> Self {
        BellError::Domain(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        BellError::Numeric(msg.into())
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            BellError::Domain(_) | BellError::Config(_) => 1,
            BellError::Numeric(_) | BellError::Io(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, BellError>;
