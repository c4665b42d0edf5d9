use thiserror::Error;

/// Errors shared by the partition, basis and linear-algebra layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("split point {x} is not admissible for atom {atom}: {reason}")]
    InvalidSplit { atom: usize, x: f64, reason: String },

    #[error("point {x} lies outside [{left}, {right}]")]
    OutOfDomain { x: f64, left: f64, right: f64 },

    #[error("atom index {index} out of range ({count} atoms)")]
    AtomIndex { index: usize, count: usize },

    #[error("step {step} out of range ({len} steps)")]
    StepRange { step: usize, len: usize },

    #[error("direction {dir} out of range for dimension {dim}")]
    Direction { dir: usize, dim: usize },

    #[error("atom reference has {got} components, filtration has {expected}")]
    DimensionMismatch { got: usize, expected: usize },

    #[error("filtration is not in standard form: {0}")]
    NonStandardForm(String),

    #[error("incompatible bases: {0}")]
    IncompatibleBases(String),

    #[error("basis index {index} out of range (dimension {dim})")]
    BasisIndex { index: usize, dim: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix not positive definite: pivot {pivot:.3e} in row {row}")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("system too ill-conditioned: estimated condition number {cond:.3e}")]
    IllConditioned { cond: f64 },

    #[error("pivot {value:.3e} at index {index} too close to zero")]
    ZeroPivot { index: usize, value: f64 },

    #[error("matrix of size {n} exceeds the limit {max} for exhaustive minors")]
    MinorLimit { n: usize, max: usize },

    #[error("selection policy picked index {index} in direction {dir}, which is not available")]
    PolicyIndex { dir: usize, index: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("serialization failed: {0}")]
    Serialization(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
