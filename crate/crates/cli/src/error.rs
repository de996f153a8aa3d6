use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Core(lps_core::Error),
}

impl CliError {
    pub(crate) fn config(e: impl std::fmt::Display) -> Self {
        CliError::Config(e.to_string())
    }

    /// 2 for configuration problems, 3 for numerical aborts, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) | CliError::Core(_) => 1,
        }
    }
}

impl From<lps_core::Error> for CliError {
    fn from(e: lps_core::Error) -> Self {
        use lps_core::Error as E;
        match e {
            E::NonFinitePaths { .. } | E::NonFinite(_) => CliError::Numeric(e.to_string()),
            E::Dimension { .. } | E::Invalid(_) | E::Dataset(_) => CliError::Config(e.to_string()),
            E::Io(io) => CliError::Io(io),
            other => CliError::Core(other),
        }
    }
}
