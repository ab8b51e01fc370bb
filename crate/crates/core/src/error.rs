use std::io;

use thiserror::Error;

/// Errors raised across the pooling pipeline.
///
/// Variants are grouped by how callers usually react: bad input files
/// (`Format`, `Corruption`), shape problems (`Validation`, `Geometry`,
/// `Contract`), numerical trouble (`Rank`, `Numerical`) and configuration.
#[derive(Debug, Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),

    #[error("corrupted payload: {0}")]
    Corruption(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("rank deficient: requested {requested} components but only {achievable} are achievable")]
    Rank { requested: usize, achievable: usize },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{stage} failed on {input}: {source}")]
    Stage {
        stage: String,
        input: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Wraps an error with the pipeline stage and input that produced it.
    pub fn in_stage(self, stage: &str, input: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            input: input.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping any stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
