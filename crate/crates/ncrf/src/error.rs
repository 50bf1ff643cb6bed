use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum NcrfError {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: produced a non-finite value")]
    NonFinite { op: String },

    #[error("{0}")]
    Contract(String),

    #[error("exact enumeration limited to {limit} sites, got {n}")]
    TooManySites { n: usize, limit: usize },

    #[error("slide {slide}: {detail}")]
    Sampling { slide: String, detail: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}:{line}: {detail}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    #[error("training aborted at step {step}: {detail}")]
    Training { step: usize, detail: String },
}

pub type Result<T> = std::result::Result<T, NcrfError>;

impl NcrfError {
    /// Shorthand for wrapping `std::io::Error` with the offending path.
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| NcrfError::Io { path, source }
    }

    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        NcrfError::Shape {
            op,
            detail: detail.into(),
        }
    }
}
