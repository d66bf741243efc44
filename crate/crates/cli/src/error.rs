use std::path::PathBuf;

/// Process exit codes; a stable contract.
pub const EXIT_OK: i32 = 0;
pub const EXIT_VERDICT: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_USAGE: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Input(String),
    /// An analysis verdict failed before the command could do its work.
    #[error("{0}")]
    Verdict(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] bayesflow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use bayesflow::Error as E;
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Input(_) | CliError::Io { .. } => EXIT_INPUT,
            CliError::Verdict(_) => EXIT_VERDICT,
            CliError::Core(e) => match e {
                E::Sampler(_) => EXIT_VERDICT,
                E::Io(_)
                | E::Data { .. }
                | E::Dataset(_)
                | E::InvalidArgument(_)
                | E::ModelMismatch(_)
                | E::Json(_)
                | E::Csv(_) => EXIT_INPUT,
            },
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
