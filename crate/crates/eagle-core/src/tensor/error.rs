use thiserror::Error;

/// Structured failure of a tensor operation.
///
/// Shape algebra is total: every op either returns a tensor of its documented
/// shape or one of these errors naming the offending dimensions.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: invalid argument: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("{op}: produced non-finite values")]
    NonFinite { op: &'static str },

    #[error("backward requires a scalar loss, got {numel} elements")]
    NonScalarLoss { numel: usize },
}

impl TensorError {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::InvalidArgument {
            op,
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, TensorError>;
