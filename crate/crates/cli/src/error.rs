use hawkes::{ErrorClass, HawkesError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Hawkes(#[from] HawkesError),

    #[error("cannot write {path}: {message}")]
    Output { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    /// 1 usage, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Output { .. } => 1,
            CliError::Hawkes(e) => match e.class() {
                ErrorClass::Usage => 1,
                ErrorClass::Data => 2,
                ErrorClass::Numerical => 3,
            },
        }
    }
}
