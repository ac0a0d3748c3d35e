use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {what} in {path}: {detail}")]
    Format {
        what: &'static str,
        path: PathBuf,
        detail: String,
    },
    #[error("model mismatch: {0}")]
    ModelMismatch(String),
    #[error(transparent)]
    Core(#[from] myoseg_core::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(what: &'static str, path: &Path, detail: impl Into<String>) -> Self {
        Self::Format {
            what,
            path: path.to_path_buf(),
            detail: detail.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Io { .. } | Self::Format { .. } => 3,
            Self::ModelMismatch(_) => 4,
            Self::Core(_) => 1,
        }
    }
}
