use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("empty support: {0}")]
    EmptySupport(String),
    #[error("symmetry mismatch: {0}")]
    SymmetryMismatch(String),

    #[error("invalid material parameter: {0}")]
    InvalidMaterial(String),
    #[error("density {value} of channel {channel} outside [{lower}, {upper}]")]
    DensityDomain { channel: usize, value: f64, lower: f64, upper: f64 },

    #[error("invalid filter radius {0}")]
    InvalidRadius(f64),
    #[error("shape mismatch: expected length {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("assembly: {0}")]
    Assembly(String),
    #[error("system is fully constrained (no free DOFs)")]
    FullyConstrained,
    #[error("factorization failed: matrix not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("eigensolver: {0}")]
    Solver(String),
    #[error("eigensolver did not converge after {iterations} restarts (worst residual {worst_residual:.3e})")]
    NoConvergence { iterations: usize, worst_residual: f64 },

    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("cluster extension budget exhausted after {solves} solves with {count} eigenvalues")]
    PathologicalDegeneracy { solves: usize, count: usize },

    #[error("optimizer: {0}")]
    Optimizer(String),
    #[error("evaluation failed at coordinate {index}: {source}")]
    Perturbation {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config: {path}: {message}")]
    Config { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
