//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes incompatible with the op being applied.
    #[error("shape mismatch in `{op}`: {detail}")]
    Shape { op: &'static str, detail: String },

    /// An op that requires a scalar received something else.
    #[error("`{op}` requires a scalar, got shape {shape:?}")]
    NonScalar { op: &'static str, shape: Vec<usize> },

    /// A named leaf referenced by a record is absent from the supplied set.
    #[error("missing parameter `{0}`")]
    MissingParam(String),

    /// Caller passed an argument outside the documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Dataset or container contents violate the declared format.
    #[error("data format error{}: {detail}", path.as_deref().map(|p| format!(" in {p}")).unwrap_or_default())]
    DataFormat { path: Option<String>, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// Wraps a failure with the training iteration it occurred in.
    #[error("training failed at iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub fn data(path: Option<&std::path::Path>, detail: impl Into<String>) -> Self {
        Error::DataFormat {
            path: path.map(|p| p.display().to_string()),
            detail: detail.into(),
        }
    }

    pub fn at_iteration(self, iteration: usize) -> Self {
        Error::AtIteration { iteration, source: Box::new(self) }
    }
}
