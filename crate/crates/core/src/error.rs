use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid transform: {0}")]
    InvalidTransform(&'static str),
    #[error("invalid line: direction must be finite and non-zero")]
    InvalidLine,
    #[error("invalid transducer geometry: {0}")]
    InvalidGeometry(&'static str),
    #[error("invalid observation: {0}")]
    InvalidObservation(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("too few poses: got {got}, need at least {need}")]
    TooFewPoses { got: usize, need: usize },
    #[error("poses {first} and {second} are not distinct (relative rotation below 0.5°)")]
    PosesNotDistinct { first: usize, second: usize },
    #[error("degenerate point set")]
    DegeneratePointSet,
    #[error("too few pairs: got {got}, need at least {need}")]
    TooFewPairs { got: usize, need: usize },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("degenerate initialization; vary PM placement")]
    DegenerateInitialization,
    #[error("tracking stalled (best Δθ = {delta_theta_rad} rad, λ = {lambda_mm} mm, residual = {residual_mm} mm)")]
    TrackingStalled { delta_theta_rad: f64, lambda_mm: f64, residual_mm: f64 },
    #[error("infeasible scene config")]
    InfeasibleScene,
    #[error("empty holdout set")]
    EmptyHoldout,
    #[error("insufficient data: got {got} pairs, need at least {need}")]
    InsufficientData { got: usize, need: usize },
}
