use alloc::string::String;

/// Errors raised by validation and the numerical routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in field \"{field}\": expected {expected}, found {found}")]
    DimensionMismatch {
        field: String,
        expected: String,
        found: String,
    },
    #[error("matrix \"{field}\" is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPsd { field: String, min_eigenvalue: f64 },
    #[error("matrix \"{field}\" is not symmetric (asymmetry {asymmetry:e})")]
    NotSymmetric { field: String, asymmetry: f64 },
    #[error("measurement noise covariance R is singular")]
    SingularR,
    #[error("sensor index {index} out of range 1..={m}")]
    SensorOutOfRange { index: usize, m: usize },
    #[error("attacked sensor indices must be strictly increasing")]
    SensorsNotIncreasing,
    #[error("actuator attack matrix Ba is not full column rank")]
    BaRankDeficient,
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("innovation covariance C P C' + R is not positive definite")]
    InnovationNotPd,
    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },
    #[error("matrix is not Schur stable (spectral radius {spectral_radius})")]
    Unstable { spectral_radius: f64 },
    #[error("covariance matrix is singular")]
    SingularCovariance,
    #[error("horizon {horizon} too short, need at least {required}")]
    HorizonTooShort { horizon: usize, required: usize },
    #[error("sequence length mismatch: expected {expected}, found {found}")]
    HorizonMismatch { expected: usize, found: usize },
    #[error("replay attack requires the attacker to own every sensor")]
    ReplayRequiresAllSensors,
    #[error("too few trials: {trials} trials at delta {delta} cannot resolve the quantile")]
    TooFewTrials { trials: usize, delta: f64 },
    #[error("need at least {required} usable points, found {found}")]
    TooFewPoints { required: usize, found: usize },
    #[error("joint dimension {dim} exceeds the cap of {cap}")]
    DimensionTooLarge { dim: usize, cap: usize },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("unsupported defender policy: {0}")]
    UnsupportedPolicy(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn dim_err(field: &str, expected: (usize, usize), found: (usize, usize)) -> Error {
    use alloc::format;
    Error::DimensionMismatch {
        field: field.into(),
        expected: format!("{}x{}", expected.0, expected.1),
        found: format!("{}x{}", found.0, found.1),
    }
}
