use thiserror::Error;

/// Crate-wide error type.
///
/// Variants map onto the CLI exit codes: `Param`/`Config` are usage errors
/// (exit 1), `Format`/`Io` are data errors (exit 2), `Invariant` is an
/// internal consistency failure (exit 3).
#[derive(Debug, Error)]
pub enum Sp4dError {
    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {msg}")]
    Format { path: String, msg: String },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Sp4dError {
    pub fn format(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Sp4dError::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Sp4dError::Param(_) | Sp4dError::Config(_) => 1,
            Sp4dError::Format { .. } | Sp4dError::Io(_) => 2,
            Sp4dError::Invariant(_) => 3,
        }
    }

    /// Short machine-readable kind tag, used on the CLI's stderr error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Sp4dError::Param(_) => "param",
            Sp4dError::Config(_) => "config",
            Sp4dError::Format { .. } => "format",
            Sp4dError::Io(_) => "io",
            Sp4dError::Invariant(_) => "invariant",
        }
    }
}

pub type Result<T> = std::result::Result<T, Sp4dError>;
