use crate::geom::PointConfiguration;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("coincident pair ({i}, {j})")]
    CoincidentPair { i: usize, j: usize },

    #[error("coincident centers ({i}, {j})")]
    CoincidentCenters { i: usize, j: usize },

    #[error("radii absent")]
    RadiiAbsent,

    #[error("coordinate {value} outside [0, {hi}] at index {index}")]
    OutOfDomain { index: usize, value: f64, hi: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("divergent polish: non-finite surrogate value")]
    DivergentPolish { last: Box<PointConfiguration> },

    #[error("projection stall: residual above {tol} after {passes} passes")]
    ProjectionStall { tol: f64, passes: usize },

    #[error("non-finite velocity at sampler step {step}")]
    NonFiniteVelocity { step: usize },

    #[error("non-finite loss at sample {sample}")]
    NonFiniteLoss { sample: usize },

    #[error("linear program infeasible")]
    LpInfeasible,

    #[error("linear program unbounded")]
    LpUnbounded,

    #[error("stale score at line {line}: stored {stored}, recomputed {actual}")]
    StaleScore { line: usize, stored: f64, actual: f64 },

    #[error("malformed record at line {line}: {message}")]
    MalformedRecord { line: usize, message: String },

    #[error("invalid configuration: {0}")]
    Validation(String),

    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
