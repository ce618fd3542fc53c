use thiserror::Error;

use crate::demogen::StageLabels;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("training diverged: non-finite value in `{param}` ({context})")]
    Divergence { param: String, context: String },

    #[error("environment fault at step {step}: {reason}")]
    Environment { step: usize, reason: String },

    #[error("demonstration collection failed: {successes} successes in {attempts} episodes")]
    CollectionFailure { successes: usize, attempts: usize },

    #[error("stage annotation ambiguous: found {found} of 4 boundaries")]
    AnnotationAmbiguous {
        found: usize,
        partial: Box<StageLabels>,
    },

    #[error("unsupported {kind} file version {found} (expected {expected})")]
    Version {
        kind: String,
        found: u32,
        expected: u32,
    },

    #[error("corrupt file: {0}")]
    Corruption(String),

    #[error("provenance mismatch: {0}")]
    Provenance(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("scheduler error: {0}")]
    Scheduler(String),

    #[error("episode terminated at step {step}")]
    Terminated { step: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
