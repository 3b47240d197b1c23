use thiserror::Error;

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch, {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("data length {len} does not fill shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },

    #[error("{op}: invalid argument, {detail}")]
    Invalid { op: &'static str, detail: String },

    #[error("{op}: division by zero")]
    DivisionByZero { op: &'static str },

    #[error("backward needs a scalar root, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },

    #[error("cannot overwrite the values of a non-leaf tensor")]
    NotLeaf,

    #[error("optimizer state does not match parameter {index}: {detail}")]
    OptimizerState { index: usize, detail: String },

    #[error("malformed tensor file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl TensorError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::Invalid {
            op,
            detail: detail.into(),
        }
    }
}
