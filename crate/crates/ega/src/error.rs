use thiserror::Error;

/// Unified error type across the library. The CLI maps each variant class to
/// a stable process exit code.
#[derive(Debug, Error)]
pub enum EgaError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl EgaError {
    pub fn config(msg: impl Into<String>) -> Self {
        EgaError::Config(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        EgaError::Numeric(msg.into())
    }

    pub fn protocol(msg: impl Into<String>) -> Self {
        EgaError::Protocol(msg.into())
    }

    pub fn format(offset: u64, msg: impl Into<String>) -> Self {
        EgaError::Format {
            offset,
            message: msg.into(),
        }
    }

    /// Process exit code contract: 0 ok, 2 config, 3 numeric, 4 io, 5 protocol.
    pub fn exit_code(&self) -> i32 {
        match self {
            EgaError::Config(_) => 2,
            EgaError::Numeric(_) => 3,
            EgaError::Format { .. } | EgaError::Io(_) => 4,
            EgaError::Protocol(_) => 5,
        }
    }
}

pub type Result<T> = std::result::Result<T, EgaError>;
