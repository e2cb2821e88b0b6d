use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error(
        "{path}:{line}: duplicate annotation of instance `{instance}` by annotator `{annotator}`"
    )]
    Conflict {
        path: String,
        line: usize,
        instance: String,
        annotator: String,
    },

    #[error("missing data: {0}")]
    MissingData(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("empty result: {0}")]
    EmptyResult(String),

    #[error("non-finite value in parameter block `{block}`")]
    Numeric { block: String },

    #[error("training failed: {0}")]
    Training(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("iteration {iteration}, fold {fold}, {architecture}: {source}")]
    Fold {
        iteration: usize,
        fold: usize,
        architecture: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag for error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Conflict { .. } => "conflict",
            Error::MissingData(_) => "missing-data",
            Error::Argument(_) => "argument",
            Error::EmptyResult(_) => "empty-result",
            Error::Numeric { .. } => "numeric",
            Error::Training(_) => "training",
            Error::Unsupported(_) => "unsupported",
            Error::UndefinedCorrelation(_) => "undefined-correlation",
            Error::Config(_) => "config",
            Error::Fold { source, .. } => source.kind(),
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
