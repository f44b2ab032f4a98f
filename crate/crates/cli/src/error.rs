use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration, arguments or input data.
    #[error("{0}")]
    Validation(String),
    /// A prior stage's artifact is missing, modified or unreadable.
    #[error("{0}")]
    Upstream(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Upstream(_) => 2,
            CliError::Internal(_) => 3,
        }
    }

    pub fn upstream(err: plexity::Error, artifact: &str, stage: &str) -> Self {
        CliError::Upstream(format!("cannot use {artifact}: {err}; re-run `plexity {stage}`"))
    }
}

impl From<plexity::Error> for CliError {
    fn from(err: plexity::Error) -> Self {
        use plexity::Error as E;
        match err {
            E::Validation(_) | E::InvalidArgument(_) | E::Parse { .. } | E::DuplicateId(_) => CliError::Validation(err.to_string()),
            E::Corrupt(_) | E::FingerprintMismatch { .. } => CliError::Upstream(err.to_string()),
            _ => CliError::Internal(err.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::Internal(err.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
