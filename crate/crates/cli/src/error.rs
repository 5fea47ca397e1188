use std::path::Path;

/// Failure of a subcommand, classified by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad invocation or missing prerequisite outputs.
    #[error("usage error: {0}")]
    Usage(String),
    /// The experiment configuration is invalid or inconsistent.
    #[error("config error: {0}")]
    Config(String),
    /// Input data or a results file could not be parsed.
    #[error("data error: {0}")]
    Data(String),
    /// Anything that fails while doing the work.
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }
}

impl From<cdbench_core::Error> for CliError {
    fn from(e: cdbench_core::Error) -> Self {
        match e {
            cdbench_core::Error::Format(msg) => CliError::Data(msg),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Attaches a path to an I/O failure while producing outputs.
pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}
