use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot load frame {frame} ({modality}): {reason}")]
    Load {
        frame: usize,
        modality: String,
        reason: String,
    },
    #[error("alignment error at frame {frame}: {reason}")]
    Alignment { frame: usize, reason: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite loss term `{0}`")]
    NonFinite(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Shorthand for contract checks on shapes and ranges.
pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Contract(msg()))
    }
}
