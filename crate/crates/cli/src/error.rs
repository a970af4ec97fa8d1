use thiserror::Error;

/// Failures of a CLI command, each mapped to a stable exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("cannot load config {path}: {reason}")]
    Config { path: String, reason: String },

    #[error("{path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] dyndepth::Error),
}

impl CliError {
    /// 0 success, 1 usage or config error, 2 I/O error, 3 numerical divergence.
    pub fn exit_code(&self) -> i32 {
        use dyndepth::Error as E;
        match self {
            CliError::Usage(_) | CliError::Config { .. } => 1,
            CliError::Write { .. } => 2,
            CliError::Core(e) => match e {
                E::Io(_) => 2,
                E::Csv(c) if c.is_io_error() => 2,
                E::Divergence(_) => 3,
                _ => 1,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
