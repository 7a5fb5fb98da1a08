use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoreError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("numeric failure in `{group}`: {detail}")]
    NumericFailure { group: String, detail: String },
    #[error("contract violation: {0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl CoreError {
    pub fn numeric(group: impl Into<String>, detail: impl Into<String>) -> Self {
        CoreError::NumericFailure {
            group: group.into(),
            detail: detail.into(),
        }
    }
}
