//! Error type shared by the whole crate.

/// Everything that can go wrong while estimating, sampling or testing.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    #[error("argument {value} is outside the domain of {what}")]
    Domain { value: f64, what: &'static str },

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("reference density vanishes at x = {at:?} where the compared density is {q:.3e}")]
    Support { at: Vec<f64>, q: f64 },

    #[error("empirical covariance is singular (Cholesky failed)")]
    SingularCovariance,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("direction vector must be non-zero")]
    ZeroDirection,

    #[error("constrained block of the covariance is singular or the constraint set is dependent")]
    DegenerateConstraint,

    #[error("axis {axis} has zero sample standard deviation")]
    DegenerateAxis { axis: usize },

    #[error("truncation kept too few points (kept_x = {kept_x}, kept_y = {kept_y}, need {min})")]
    TooFewRetained {
        kept_x: usize,
        kept_y: usize,
        min: usize,
    },

    #[error("{factor} evaluated to {value:.3e}, below the floor {floor:.3e}")]
    FloorViolation {
        factor: &'static str,
        value: f64,
        floor: f64,
    },

    #[error("per-point criterion contributions are constant; variance is zero")]
    ZeroVariance,

    #[error("importance weights degenerate: ESS = {ess:.1} < required {required:.1}")]
    DegenerateWeights { ess: f64, required: f64 },

    #[error("stopping direction is {angle_deg:.1} degrees from the nearest axis, beyond tolerance {tolerance_deg:.1}")]
    StructureMismatch { angle_deg: f64, tolerance_deg: f64 },

    #[error("predictor column has zero variance")]
    DegeneratePredictor,

    #[error("extracted directions are numerically dependent (condition number {cond:.3e})")]
    BasisDegenerate { cond: f64 },

    #[error("pursuit failed at level {level}: {source}")]
    AtLevel {
        level: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wrap an error with the pursuit level it occurred at.
    pub fn at_level(self, level: usize) -> Self {
        Error::AtLevel {
            level,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
