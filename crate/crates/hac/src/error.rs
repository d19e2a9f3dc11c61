use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HacError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
    #[error(transparent)]
    Core(#[from] hac_core::Error),
    #[error("verification failed: {0}")]
    Verify(String),
    #[error("{0}")]
    Usage(String),
}

pub type Result<T, E = HacError> = std::result::Result<T, E>;

pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 2;
    pub const IO: i32 = 3;
    pub const FORMAT: i32 = 4;
    pub const VERIFY: i32 = 5;
    pub const FAILED: i32 = 6;
}

impl HacError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HacError::Io { path: path.to_path_buf(), source }
    }

    pub fn format(what: &'static str, detail: impl Into<String>) -> Self {
        HacError::Format { what, detail: detail.into() }
    }

    pub fn exit_code(&self) -> i32 {
        use hac_core::Error as E;
        match self {
            HacError::Usage(_) => exit::USAGE,
            HacError::Io { .. } => exit::IO,
            HacError::Format { .. } => exit::FORMAT,
            HacError::Verify(_) => exit::VERIFY,
            HacError::Core(e) => match e {
                E::InvalidConfig(_) | E::InvalidGrid(_) | E::InvalidStep(_) => exit::USAGE,
                E::InvalidScene(_)
                | E::NonFinite { .. }
                | E::EmptyScene
                | E::Shape(_)
                | E::CellOutOfRange { .. }
                | E::SymbolRange { .. }
                | E::NonFiniteValue
                | E::Exhausted
                | E::Desync => exit::FORMAT,
                E::Diverged { .. } => exit::FAILED,
            },
        }
    }
}
