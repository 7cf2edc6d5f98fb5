use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum KitError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// A core error raised while reading a specific file.
    #[error("{}: {source}", path.display())]
    Data {
        path: PathBuf,
        #[source]
        source: bilbo_core::Error,
    },
    #[error(transparent)]
    Core(#[from] bilbo_core::Error),
    #[error("{0}")]
    Usage(String),
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type KitResult<T> = Result<T, KitError>;

pub mod exit {
    pub const OK: u8 = 0;
    pub const VERIFY_FAILED: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const DIVERGED: u8 = 3;
}

impl KitError {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self::Usage(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Core(bilbo_core::Error::Diverged { .. }) => exit::DIVERGED,
            _ => exit::USAGE,
        }
    }
}
