use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = FreaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum FreaError {
    /// Tensor shapes do not line up for the requested operation.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("malformed {format} data: {detail}")]
    Format { format: &'static str, detail: String },

    #[error("unsupported image format in {0}")]
    UnsupportedFormat(PathBuf),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("empty mask: no body voxels above threshold")]
    EmptyMask,

    #[error("non-finite loss at epoch {epoch}, sample {sample}")]
    NonFiniteLoss { epoch: usize, sample: String },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl FreaError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        FreaError::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FreaError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(format: &'static str, detail: impl Into<String>) -> Self {
        FreaError::Format {
            format,
            detail: detail.into(),
        }
    }
}
