use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFiniteInput(String),

    #[error("loss must be a scalar, got shape [{rows}, {cols}]")]
    NonScalarLoss { rows: usize, cols: usize },

    #[error("non-finite gradient produced by `{op}` (node {node})")]
    NonFiniteGradient { op: &'static str, node: usize },

    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite loss term `{0}`")]
    NonFiniteLoss(&'static str),

    #[error("point behind camera (z = {0})")]
    BehindCamera(f64),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("format error in {}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Process exit status: 2 for configuration problems, 3 for numeric
    /// aborts, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::NonFiniteInput(_) | Error::NonFiniteGradient { .. } | Error::NonFiniteLoss(_) => 3,
            _ => 1,
        }
    }
}
