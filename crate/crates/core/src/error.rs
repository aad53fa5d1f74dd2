use thiserror::Error;

/// Errors raised by basis construction, model fitting, simulation and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("connectivity range must be positive, got {0}")]
    InvalidRange(f64),
    #[error("no eigenvalue of the centered connectivity matrix exceeds the retention threshold")]
    EmptyBasis,
    #[error("vector has zero variance after centering")]
    ZeroVariance,
    #[error("design matrix is rank deficient: {0}")]
    RankDeficient(String),
    #[error("smoothness parameter must be non-negative, got {0}")]
    InvalidSmoothness(f64),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("optimizer did not converge within {evaluations} evaluations")]
    ConvergenceFailure { evaluations: usize },
    #[error("bandwidth must be positive, got {0}")]
    InvalidBandwidth(f64),
    #[error("local weighted design is singular at site {0}")]
    LocalSingularity(usize),
    #[error("bandwidth selection failed: {0}")]
    SelectionFailure(String),
    #[error("shape mismatch: {0}")]
    ShapeError(String),
    #[error("benchmark cell {cell} failed: {failed} of {replicates} replicates could not be fitted")]
    CellFailure {
        cell: String,
        failed: usize,
        replicates: usize,
    },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
