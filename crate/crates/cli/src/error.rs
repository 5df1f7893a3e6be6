use std::fmt;

/// Failures with a dedicated process exit code. Anything else exits with 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CliError {
    Config(String),
    Data(String),
    /// A required upstream artifact is missing, stale or modified.
    Upstream(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Upstream(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Upstream(m) => write!(f, "upstream artifact error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

/// Exit code for an error chain: the first [`CliError`] found decides, otherwise 1.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    err.chain()
        .find_map(|e| e.downcast_ref::<CliError>())
        .map_or(1, CliError::exit_code)
}
