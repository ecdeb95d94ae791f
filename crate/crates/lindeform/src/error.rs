use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Bad flags or arguments.
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    /// Malformed file contents.
    #[error("{0}")]
    Format(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error(transparent)]
    Core(#[from] lindeform_core::Error),
    #[error("training diverged at step {step}")]
    Diverged { step: usize },
}

impl Error {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// 1 usage, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Io { .. } | Error::Format(_) | Error::NotFound(_) => 2,
            Error::Core(e) if e.is_numerical() => 3,
            Error::Core(lindeform_core::Error::Usage(_)) => 1,
            Error::Core(_) => 2,
            Error::Diverged { .. } => 3,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
