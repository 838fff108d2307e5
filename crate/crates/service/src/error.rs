use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("invalid job configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown job {0}")]
    UnknownJob(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("storage: {0}")]
    Io(#[from] std::io::Error),
    #[error("job failed: {0}")]
    Execution(String),
}

impl ServiceError {
    pub fn invalid(e: impl std::fmt::Display) -> Self {
        ServiceError::InvalidConfig(e.to_string())
    }
}
