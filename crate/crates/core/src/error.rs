use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value at node {index} ({op})")]
    NonFinite { index: usize, op: &'static str },

    #[error("{side} point is off the {dataset} manifold (residual {residual:e})")]
    OffManifold {
        dataset: &'static str,
        side: &'static str,
        residual: f64,
    },

    #[error(
        "training aborted: no cell reaches the minimum size {min_size}; occupancies: {occupancy}"
    )]
    NoTrainableCells { min_size: usize, occupancy: String },

    #[error("malformed {what}: {detail}")]
    Format { what: String, detail: String },

    #[error("{0}")]
    Mismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(what: impl Into<String>, detail: impl ToString) -> Self {
        Error::Format {
            what: what.into(),
            detail: detail.to_string(),
        }
    }
}
