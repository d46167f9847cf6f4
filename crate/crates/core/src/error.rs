//! Crate-wide error type.

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("tensor evaluation produced a non-finite entry at x={x:?}, y={y:?}")]
    NonFiniteTensor { x: Vec<f64>, y: Vec<f64> },

    #[error("eigenvalue computation failed at sample x={x:?}, y={y:?}")]
    EigenFailure { x: Vec<f64>, y: Vec<f64> },

    #[error("sample specification yields an empty sample set")]
    EmptySampleSet,

    #[error("degenerate box: upper corner must exceed lower corner on every axis")]
    DegenerateBox,

    #[error("dimension mismatch: {context} (expected {expected}, got {got})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("linear solver did not converge in {iterations} iterations (last residual {last_residual:.3e})")]
    LinearSolve {
        iterations: usize,
        last_residual: f64,
        residual_history: Vec<f64>,
    },

    #[error("geometry violation: {0}")]
    Geometry(String),

    #[error("no admissible radius above mesh resolution {resolution:.3e} (largest feasible tested: {largest_feasible:?})")]
    NoAdmissibleRadius {
        resolution: f64,
        largest_feasible: Option<f64>,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("field file format error: {0}")]
    FieldFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
