use fsu_demand::ErrorClass;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    /// An upstream command has not been run into this output directory.
    #[error("missing artifact {path}; run `{producer}` first")]
    MissingArtifact {
        path: String,
        producer: &'static str,
    },

    #[error(transparent)]
    Core(#[from] fsu_demand::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: impl std::fmt::Display, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_string(),
            source,
        }
    }

    pub fn class(&self) -> &'static str {
        match self {
            CliError::Config(_) | CliError::MissingArtifact { .. } => "config",
            CliError::Io { .. } => "data",
            CliError::Core(e) => match e.class() {
                ErrorClass::Config => "config",
                ErrorClass::Data => "data",
                ErrorClass::Estimation => "estimation",
            },
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.class() {
            "config" => 2,
            "data" => 3,
            _ => 4,
        }
    }

    pub fn report(&self, command: &str) -> ErrorReport {
        ErrorReport {
            command: command.to_string(),
            class: self.class(),
            exit_code: self.exit_code(),
            message: self.to_string(),
        }
    }
}

/// Machine-readable failure summary printed to stderr as one JSON line.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorReport {
    pub command: String,
    pub class: &'static str,
    pub exit_code: i32,
    pub message: String,
}
