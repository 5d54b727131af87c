use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand extents disagree; `axis` names the offending axis.
    #[error("dimension mismatch on {axis}: {detail}")]
    Dimension { axis: String, detail: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    /// Operation called in the wrong order, e.g. backward before forward.
    #[error("invalid state: {0}")]
    State(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed or inconsistent file contents.
    #[error("format error: {0}")]
    Format(String),

    /// Input values outside their domain, e.g. a class index >= C.
    #[error("data error: {0}")]
    Data(String),

    #[error("empty batch: {0}")]
    EmptyBatch(String),

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("layer {id}: {source}")]
    Layer {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn dim(axis: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Dimension {
            axis: axis.into(),
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_layer(self, id: &str) -> Self {
        Error::Layer {
            id: id.to_string(),
            source: Box::new(self),
        }
    }

    /// The innermost error, looking through layer wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Layer { source, .. } => source.root(),
            other => other,
        }
    }
}
