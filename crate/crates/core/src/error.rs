use thiserror::Error;

/// Errors shared by all modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("all robots coincide with the centroid; direction is undefined")]
    UndefinedDirection,

    #[error("degenerate deployment: offsets do not span the ambient space")]
    DegenerateDeployment,

    #[error(
        "rejection sampling failed: {accepted} accepted out of {attempts} draws \
         (acceptance rate below 1e-4); check the shape/density specification"
    )]
    RejectionSamplingFailed { attempts: u64, accepted: u64 },

    #[error("robot {index} lies outside the bounds region; the divergence bound does not apply")]
    RobotOutsideRegion { index: usize },

    #[error("all robots are dead; simulation cannot continue")]
    AllRobotsDead,

    #[error("morph target matrix is singular")]
    SingularMorphTarget,
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
