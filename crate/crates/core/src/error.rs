use std::path::PathBuf;

/// Errors produced anywhere in the calibration pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A parameter outside its mathematical domain (non-positive temperature, bad window).
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed or inconsistent input data.
    #[error("input error: {0}")]
    Input(String),

    /// Objective or gradient became non-finite during a fit.
    #[error("optimization error at {location}: {message}")]
    Optimization { location: String, message: String },

    /// A dataset or model file failed validation.
    #[error("load error in {path} line {line}: {message}")]
    Load {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("split error: {0}")]
    Split(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable tag used in CLI error documents.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Input(_) => "input",
            Error::Optimization { .. } => "optimization",
            Error::Load { .. } => "load",
            Error::Split(_) => "split",
            Error::Training(_) => "training",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
