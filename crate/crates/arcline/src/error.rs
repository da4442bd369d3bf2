use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] arcline_core::Error),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid dataset: {0}")]
    Dataset(String),
    #[error("invalid argument: {0}")]
    Usage(String),
    #[error("solver did not converge: {0}")]
    NotConverged(String),
}

impl CliError {
    /// Process exit status: 2 for non-convergence, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::NotConverged(_) | CliError::Core(arcline_core::Error::TrackingStalled { .. }) => 2,
            _ => 1,
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}
