use std::path::{Path, PathBuf};

/// Errors raised by the pipeline runner, file formats and providers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] privi_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    /// A file exists but does not parse as the expected format.
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    /// A stage needs the output of an earlier stage that has not been run.
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().to_path_buf(), source }
    }

    pub fn format(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format { path: path.into(), message: message.into() }
    }

    pub fn is_provider(&self) -> bool {
        matches!(self, Error::Core(privi_core::Error::ProviderUnavailable(_) | privi_core::Error::ProviderSchema(_)))
    }

    /// Process exit code: 3 for provider failures, 2 for contract violations,
    /// bad input, bad configuration and missing artifacts, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            _ if self.is_provider() => 3,
            Error::Core(_) | Error::Format { .. } | Error::Config(_) | Error::MissingArtifact(_) => 2,
            Error::Io { .. } => 1,
        }
    }
}
