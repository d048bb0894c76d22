use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("{stage}: {source}")]
    Core {
        stage: String,
        #[source]
        source: xlris::Error,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv export: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("refusing to export an empty table `{0}`")]
    EmptyTable(String),
    #[error("replay mismatch for {artifact}: expected {expected}, got {actual}")]
    ReplayMismatch { artifact: String, expected: String, actual: String },
}

pub type SimResult<T> = Result<T, SimError>;

/// Attaches a stage label to core errors.
pub trait Stage<T> {
    fn stage(self, stage: impl Into<String>) -> SimResult<T>;
}

impl<T> Stage<T> for xlris::Result<T> {
    fn stage(self, stage: impl Into<String>) -> SimResult<T> {
        self.map_err(|source| SimError::Core { stage: stage.into(), source })
    }
}
