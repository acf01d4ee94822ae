use thiserror::Error;

#[derive(Debug, Error)]
pub enum CstError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("singular point: {0}")]
    SingularPoint(String),

    #[error("singular configuration: point lies on the source-detector line")]
    SingularConfiguration,

    #[error("singular weight: scattering point coincides with source or detector")]
    SingularWeight,

    #[error("ill-conditioned basis: {0}")]
    IllConditionedBasis(String),

    #[error("degenerate hyperplane: normal vector is zero")]
    DegenerateHyperplane,

    #[error("infeasible step: search direction is zero")]
    InfeasibleStep,

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("undefined ratio: zero denominator")]
    UndefinedRatio,

    #[error("biased tracking: majorant {majorant} below maximum attenuation {required}")]
    BiasedTracking { majorant: f64, required: f64 },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CstError>;

pub(crate) fn invalid(msg: impl Into<String>) -> CstError {
    CstError::InvalidArgument(msg.into())
}
