use havens_core::HavenError;

/// Success.
pub const EXIT_OK: i32 = 0;
/// Configuration or parse error.
pub const EXIT_CONFIG: i32 = 2;
/// Arena or other resource too small.
pub const EXIT_RESOURCE: i32 = 3;
/// A demo did not behave as its expectation flags said.
pub const EXIT_MISMATCH: i32 = 4;

/// Errors surfaced by the command line, each mapped to an exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("resource error: {0}")]
    Resource(String),
    #[error("expectation mismatch: {0}")]
    Mismatch(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Haven(HavenError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Csv(_) => EXIT_CONFIG,
            CliError::Resource(_) => EXIT_RESOURCE,
            CliError::Mismatch(_) => EXIT_MISMATCH,
            CliError::Io { .. } => 1,
            CliError::Haven(HavenError::OutOfMemory { .. }) => EXIT_RESOURCE,
            CliError::Haven(HavenError::Config(_)) => EXIT_CONFIG,
            CliError::Haven(_) => 1,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

impl From<HavenError> for CliError {
    fn from(e: HavenError) -> Self {
        match e {
            HavenError::OutOfMemory { needed, free } => CliError::Resource(format!(
                "arena too small: need {needed} more pages, {free} free"
            )),
            HavenError::Config(msg) => CliError::Config(msg.to_string()),
            other => CliError::Haven(other),
        }
    }
}
