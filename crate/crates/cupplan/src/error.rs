use std::path::Path;

use cupplan_core::Error as CoreError;

pub type AppResult<T> = Result<T, AppError>;

/// Errors of the command line and service, split by exit code.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    /// Bad flags, config or inputs (exit code 2).
    #[error("{0}")]
    Validation(String),
    /// A failure while running a valid request (exit code 3).
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl AppError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        AppError::Runtime(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Validation(_) => 2,
            AppError::Runtime(_) => 3,
            AppError::Core(e) if is_validation(e) => 2,
            AppError::Core(_) => 3,
        }
    }
}

/// Core errors that reject caller input rather than report a failed computation.
pub fn is_validation(e: &CoreError) -> bool {
    matches!(
        e,
        CoreError::InvalidArgument(_)
            | CoreError::InvalidIntrinsics(_)
            | CoreError::BadRange(_)
            | CoreError::SpecOutOfBounds(_)
            | CoreError::AngleOutOfRange(_)
            | CoreError::BadResolution(_)
            | CoreError::FrameMismatch { .. }
            | CoreError::ZeroVector
    )
}

impl From<serde_json::Error> for AppError {
    fn from(e: serde_json::Error) -> Self {
        AppError::Runtime(format!("json: {e}"))
    }
}

impl From<csv::Error> for AppError {
    fn from(e: csv::Error) -> Self {
        AppError::Runtime(format!("csv: {e}"))
    }
}

impl From<image::ImageError> for AppError {
    fn from(e: image::ImageError) -> Self {
        AppError::Runtime(format!("image: {e}"))
    }
}
