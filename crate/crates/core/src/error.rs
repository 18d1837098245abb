use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("cell {cell} is not active")]
    InactiveCell { cell: usize },

    #[error("clipping cell {cell} against the domain produced an empty region")]
    EmptyClip { cell: usize },

    #[error("cell {cell} contains no part of the domain boundary")]
    NoBoundary { cell: usize },

    #[error("point ({x}, {y}) lies outside the active mesh")]
    OutsideActiveMesh { x: f64, y: f64 },

    #[error("angle {theta} lies outside the sector [0, {omega}]")]
    OutsideSector { theta: f64, omega: f64 },

    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("conjugate gradients did not converge in {iterations} iterations (relative residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("interface mismatch: {0}")]
    InterfaceMismatch(String),

    #[error("at least {needed} rows are required to fit a rate, got {got}")]
    TooFewRows { needed: usize, got: usize },

    #[error("trial {trial} with shift ({sx}, {sy}) failed: {source}")]
    TrialFailed {
        trial: usize,
        sx: f64,
        sy: f64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
