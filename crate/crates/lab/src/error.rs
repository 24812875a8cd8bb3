use binormal_core::LabError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Validation(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("I/O failure: {0}")]
    Io(String),
}

impl RunError {
    /// Process exit code: 1 validation, 2 numerical, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Validation(_) => 1,
            RunError::Numerical(_) => 2,
            RunError::Io(_) => 3,
        }
    }
}

impl From<LabError> for RunError {
    fn from(e: LabError) -> Self {
        match e {
            LabError::Input(_) => RunError::Validation(e.to_string()),
            _ => RunError::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e.to_string())
    }
}

pub type RunResult<T> = Result<T, RunError>;
