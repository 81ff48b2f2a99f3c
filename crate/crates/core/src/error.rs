use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("tensor order {order} outside supported range 0..={max}")]
    OrderOutOfRange { order: usize, max: usize },

    #[error("order mismatch: expected {expected}, got {got}")]
    OrderMismatch { expected: usize, got: usize },

    #[error("entry count {got} does not match 3^{order}")]
    EntryCount { order: usize, got: usize },

    #[error("non-finite tensor entry at flat position {0}")]
    NonFinite(usize),

    #[error("missing tilde tensor for pair ({j}, {k})")]
    MissingPair { j: usize, k: usize },

    #[error("grid size {0} must be even and at least 4")]
    BadGrid(usize),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("solvability violated: {what} residual {residual:.3e} exceeds {tol:.3e}")]
    SolvabilityViolated { what: String, residual: f64, tol: f64 },

    #[error("no convergence after {iterations} iterations, final relative residual {residual:.3e}")]
    NoConvergence { iterations: usize, residual: f64, history: Vec<f64> },

    #[error("homogenised matrix is not symmetric positive definite (min eigenvalue {0:.3e})")]
    NotSpd(f64),

    #[error("invalid laminate profile: {0}")]
    InvalidProfile(String),

    #[error("level {requested} unsupported (maximum {max})")]
    LevelUnsupported { requested: usize, max: usize },

    #[error("hierarchy is missing level {0}")]
    MissingLevel(usize),

    #[error("tilde formulas disagree for ({j}, {k}): max deviation {deviation:.3e}")]
    TildeMismatch { j: usize, k: usize, deviation: f64 },

    #[error("invalid torus problem: {0}")]
    InvalidProblem(String),

    #[error("reconstruction grid too coarse: {points} points per fast period (need at least 8)")]
    GridTooCoarse { points: usize },

    #[error("slope fit needs at least 3 samples, got {0}")]
    TooFewSamples(usize),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
