use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("control coordinate {coord} = {value} outside [{lower}, {upper}]")]
    ControlOutOfBox {
        coord: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("non-finite state produced at step {step}")]
    Divergence { step: usize },

    #[error("Euler image {point:?} left the region {lower:?}..{upper:?}")]
    BoundaryClipping {
        point: Vec<f64>,
        lower: Vec<f64>,
        upper: Vec<f64>,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("distance query against an empty point set")]
    EmptySet,

    #[error("unknown system `{0}`")]
    UnknownSystem(String),

    #[error("singular bordered system with {support} support vectors")]
    Singular { support: usize },

    #[error("incremental solver did not settle after {migrations} migrations ({diagnostic})")]
    Cycling {
        migrations: usize,
        diagnostic: String,
    },

    #[error("offset disagreement {spread:e} among support vectors")]
    OffsetMismatch { spread: f64 },

    #[error("no admissible step for point {index}: {reason}")]
    NoStep { index: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
