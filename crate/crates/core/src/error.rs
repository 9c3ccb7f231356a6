use thiserror::Error;

#[derive(Debug, Error)]
pub enum FavcError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = FavcError> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> FavcError {
    FavcError::Shape {
        op,
        detail: detail.into(),
    }
}

pub(crate) fn invalid(detail: impl Into<String>) -> FavcError {
    FavcError::InvalidArgument(detail.into())
}
