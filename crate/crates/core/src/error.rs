use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum SgmError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The requested quantity does not exist at this point (e.g. a score on
    /// the support of a degenerate measure at t = 0).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SgmError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(SgmError::InvalidArgument(msg.into()))
}

impl SgmError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        SgmError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Process exit code used by the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            SgmError::Config { .. } | SgmError::Json(_) | SgmError::InvalidArgument(_) => 2,
            SgmError::Io(_) => 2,
            SgmError::Domain(_) | SgmError::Numerical(_) => 3,
        }
    }
}
