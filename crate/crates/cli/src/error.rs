use radarsr_core::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad configuration or input layout, detected before any output is written.
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Core(e) => match e.root() {
                Error::InvalidConfig(_) => 1,
                Error::Divergence { .. } => 3,
                _ => 2,
            },
        }
    }
}

pub fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}
