use thiserror::Error;

/// Errors raised by the estimation kernel.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FspdaError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("design is rank deficient (smallest singular value {smallest:e} below tolerance {tolerance:e})")]
    RankDeficient { smallest: f64, tolerance: f64 },

    #[error("invalid panel: {0}")]
    InvalidPanel(String),

    #[error("unit set is empty")]
    EmptySet,

    #[error("unit index {index} out of range for {n_units} control units")]
    InvalidIndex { index: usize, n_units: usize },

    #[error("index {index} out of range (valid range 1..={max})")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("selection path is empty")]
    EmptyPath,

    #[error("C({n}, {k}) = {count} subsets exceeds the enumeration guard of {limit}")]
    CombinatorialExplosion { n: usize, k: usize, count: f64, limit: f64 },

    #[error("every candidate subset is rank deficient")]
    Infeasible,

    #[error("long-run variance {value:e} is not positive; inference is degenerate")]
    NonPositiveLrv { value: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, FspdaError>;
