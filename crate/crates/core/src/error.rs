use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("matrix is not symmetric: |m[{row}][{col}] - m[{col}][{row}]| = {diff:e}")]
    NotSymmetric { row: usize, col: usize, diff: f64 },

    #[error("bandwidth matrix is numerically singular (det = {det:e})")]
    SingularBandwidth { det: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("axis {axis} has zero range; widen the grid manually")]
    DegenerateAxis { axis: usize },

    #[error("observation {row} lies outside the grid on axis {axis}")]
    OutOfRange { row: usize, axis: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("too few points: need at least {needed}, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("fewer than two distinct observations remain after removing duplicates")]
    AllDuplicates,

    #[error("unknown mixture model `{0}`")]
    UnknownModel(String),

    #[error("unknown evaluation strategy `{0}`")]
    UnknownStrategy(String),

    #[error("invalid mixture: {0}")]
    InvalidMixture(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}
