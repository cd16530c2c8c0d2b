//! Harness errors and their process exit codes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] mlme_qpt::error::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("{0} invariant check(s) failed")]
    Validation(usize),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

impl HarnessError {
    /// 2 for bad input or files, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        use mlme_qpt::error::Error as E;
        match self {
            HarnessError::Config(_) | HarnessError::Io(_) | HarnessError::Csv(_) | HarnessError::Json(_) => 2,
            HarnessError::Core(
                E::Parameter(_) | E::UnknownChannel(_) | E::Fiducial(_) | E::Dimension(_) | E::Io(_) | E::Json(_),
            ) => 2,
            HarnessError::Core(_) | HarnessError::Validation(_) => 3,
        }
    }
}
