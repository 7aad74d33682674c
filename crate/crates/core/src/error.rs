use thiserror::Error;

use crate::dataset::Dataset;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("malformed dataset header: {0}")]
    MalformedHeader(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("unknown field `{0}`")]
    UnknownField(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("axis too short: {needed} points needed, {available} available")]
    AxisTooShort { needed: usize, available: usize },

    #[error("unsupported derivative: {0}")]
    UnsupportedDerivative(String),

    #[error("spectral differentiation requires a periodic axis ({0})")]
    NonPeriodicAxis(String),

    #[error("degenerate library: {0}")]
    DegenerateLibrary(String),

    #[error("no terms shared between discovered and reference models")]
    NoCommonTerms,

    #[error("numerical instability: {message}")]
    Instability {
        message: String,
        /// Trajectory computed up to the last healthy output slice.
        partial: Option<Box<Dataset>>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn instability(msg: impl Into<String>) -> Self {
        Error::Instability {
            message: msg.into(),
            partial: None,
        }
    }
}
