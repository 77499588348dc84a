use thiserror::Error;

/// Errors produced by the advisor library.
#[derive(Debug, Error)]
pub enum AdvisorError {
    /// A schema document, run config, mix file or cache file is malformed.
    #[error("invalid input: {0}")]
    Input(String),

    /// Inputs parse but violate a semantic constraint (dangling reference,
    /// bad range, inconsistent dimensions, ...).
    #[error("validation failed: {0}")]
    Validation(String),

    /// An action was applied in a state where it is masked out.
    #[error("illegal action {action} in current state: {reason}")]
    IllegalAction { action: usize, reason: String },

    /// Checkpoint or bundle files that cannot be read back.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, AdvisorError>;

impl AdvisorError {
    pub fn input(msg: impl Into<String>) -> Self {
        AdvisorError::Input(msg.into())
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        AdvisorError::Validation(msg.into())
    }
}
