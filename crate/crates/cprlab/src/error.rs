use std::io;

use cpr_core::CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Core(#[from] CoreError),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

impl HarnessError {
    pub fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        HarnessError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, HarnessError::Core(CoreError::NumericFailure { .. }))
    }

    /// 0 success, 1 config or input error, 2 numeric failure.
    pub fn exit_code(&self) -> u8 {
        if self.is_numeric() {
            2
        } else {
            1
        }
    }
}
