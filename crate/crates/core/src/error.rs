use alloc::string::String;

/// Everything that can go wrong inside the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value encountered")]
    NonFinite,
    #[error("index {index} out of range for dataset of {len} items")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("index {0} was already removed")]
    IndexAlreadyRemoved(usize),
    #[error("dense oracle failed: matrix is not symmetric positive definite")]
    OracleFailure,
    #[error("Hessian-vector product produced a non-finite value")]
    DegenerateCurvature,
    #[error("sigma[{index}] = {value} is outside [{min}, {max}]")]
    SigmaOutOfBounds { index: usize, value: f64, min: f64, max: f64 },
    #[error("sigma entries must be strictly positive")]
    NonPositiveSigma,
    #[error("variational training diverged at iteration {0}")]
    TrainingDiverged(usize),
    #[error("sampler diverged at iteration {0}")]
    ChainDiverged(usize),
    #[error("no active items in the dataset")]
    EmptyActiveSet,
    #[error("scaled operator norm estimate {0} exceeds 1.05")]
    SpectralBoundViolated(f64),
    #[error("Neumann recursion produced a non-finite iterate at step {0}")]
    NeumannDiverged(usize),
    #[error("gradient norm {grad_norm} exceeds stationarity tolerance {tolerance}")]
    StationarityViolated { grad_norm: f64, tolerance: f64 },
    #[error("cannot combine influences with different targets")]
    MixedTargets,
    #[error("matrix is not symmetric positive definite")]
    NotSpd,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("domain violation: {0}")]
    Domain(String),
}

pub type Result<T> = core::result::Result<T, Error>;
