use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected}, found {found}")]
    DimensionMismatch {
        op: &'static str,
        expected: String,
        found: String,
    },

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("matrix is not positive semi-definite (min eigenvalue {min_eig:e})")]
    NotPositiveSemiDefinite { min_eig: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("observation noise covariance is singular beyond regularization")]
    SingularObservationNoise,

    #[error("inadmissible state at step {step} (t = {t})")]
    Inadmissible { step: usize, t: f64 },

    #[error("non-finite state at step {step} (t = {t})")]
    NonFiniteState { step: usize, t: f64 },

    #[error("scaled covariance lost positive definiteness beyond repair at step {step}")]
    CovarianceBreakdown { step: usize },

    #[error("not enough samples: {0}")]
    InsufficientSamples(String),

    #[error("sampler produced only coincident points")]
    CoincidentSamples,

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("model is not linear; the discrete Kalman oracle requires a linear model")]
    NotLinear,

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("fundamental matrix overflowed at step {step}; not exponentially stable")]
    StabilityOverflow { step: usize },

    #[error("linearization is not exponentially stable (fitted rate {c_hat})")]
    NotExponentiallyStable { c_hat: f64 },

    #[error("all {n_paths} paths failed at epsilon = {epsilon}")]
    AllPathsFailed { epsilon: f64, n_paths: usize },
}

impl Error {
    /// Short stable label of the variant, used to tally failures in reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NonFinite => "non_finite",
            Error::NotSymmetric { .. } => "not_symmetric",
            Error::NotPositiveDefinite => "not_positive_definite",
            Error::NotPositiveSemiDefinite { .. } => "not_positive_semi_definite",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::SingularObservationNoise => "singular_observation_noise",
            Error::Inadmissible { .. } => "inadmissible",
            Error::NonFiniteState { .. } => "non_finite_state",
            Error::CovarianceBreakdown { .. } => "covariance_breakdown",
            Error::InsufficientSamples(_) => "insufficient_samples",
            Error::CoincidentSamples => "coincident_samples",
            Error::DegenerateFit(_) => "degenerate_fit",
            Error::NotLinear => "not_linear",
            Error::GridMismatch(_) => "grid_mismatch",
            Error::StabilityOverflow { .. } => "stability_overflow",
            Error::NotExponentiallyStable { .. } => "not_exponentially_stable",
            Error::AllPathsFailed { .. } => "all_paths_failed",
        }
    }

    /// Whether the error comes from the numerics rather than from the inputs.
    pub fn is_numerical(&self) -> bool {
        !matches!(
            self,
            Error::DimensionMismatch { .. }
                | Error::InvalidParameter(_)
                | Error::NotLinear
                | Error::GridMismatch(_)
                | Error::InsufficientSamples(_)
        )
    }
}
