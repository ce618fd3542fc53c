//! Error kinds and their process exit codes.

use std::fmt;
use std::path::Path;

use stagebc::Error;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    MissingFile(String),
    Core(Error),
    Bridge(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => CliError::MissingFile(io.to_string()),
            other => CliError::Core(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::from(Error::Io(e))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(Error::Json(e))
    }
}

impl CliError {
    /// Stable machine-readable kind.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::MissingFile(_) => "missing_file",
            CliError::Bridge(_) => "bridge",
            CliError::Core(e) => match e {
                Error::Dimension(_) => "dimension",
                Error::Contract(_) => "contract",
                Error::Divergence { .. } => "divergence",
                Error::Environment { .. } => "environment",
                Error::CollectionFailure { .. } => "collection_failure",
                Error::AnnotationAmbiguous { .. } => "annotation_ambiguous",
                Error::Version { .. } => "version",
                Error::Corruption(_) => "corruption",
                Error::Provenance(_) => "provenance",
                Error::Configuration(_) => "configuration",
                Error::Scheduler(_) => "scheduler",
                Error::Terminated { .. } => "terminated",
                Error::Io(_) => "io",
                Error::Json(_) => "json",
            },
        }
    }

    pub fn code(&self) -> i32 {
        match self.kind() {
            "usage" => 2,
            "missing_file" => 3,
            "provenance" => 4,
            "version" => 5,
            "corruption" => 6,
            "configuration" => 7,
            "contract" => 8,
            "dimension" => 9,
            "divergence" => 10,
            "environment" => 11,
            "collection_failure" => 12,
            "annotation_ambiguous" => 13,
            "scheduler" => 14,
            "terminated" => 15,
            "io" => 16,
            "json" => 17,
            _ => 18,
        }
    }

    /// One JSON line for stderr.
    pub fn line(&self) -> String {
        serde_json::json!({ "error": self.kind(), "code": self.code(), "message": self.to_string() }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Bridge(m) => f.write_str(m.lines().next().unwrap_or_default()),
            CliError::MissingFile(p) => write!(f, "file not found: {p}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = Result<T, CliError>;

/// Fails with a missing-file error unless `path` exists.
pub fn require(path: &Path) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingFile(path.display().to_string()))
    }
}
