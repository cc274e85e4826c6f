use thiserror::Error;

/// Errors raised by the simulator and verifier.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CqError {
    #[error("rejected input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("model failed the complete-positivity audit at q = {q}: {detail}")]
    NotCompletelyPositive { q: f64, detail: String },

    #[error("step size {dt} exceeds the stability bound {limit}")]
    StepTooLarge { dt: f64, limit: f64 },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("trace drifted to {trace} (|drift| = {drift:e}) at t = {t}")]
    TraceDrift { t: f64, trace: f64, drift: f64 },

    #[error("cell eigenvalue {min_eig:e} below tolerance at t = {t}")]
    Negativity { t: f64, min_eig: f64 },

    #[error("probability mass {mass:e} reached the grid boundary at t = {t}")]
    BoundaryLeak { t: f64, mass: f64 },

    #[error("model is not diagonal in a common basis: {0}")]
    NonCommuting(String),

    #[error("path rejected at step {index}: {detail}")]
    PathRejected { index: usize, detail: String },

    #[error("measurement strength k(z) = {k} is not positive at z = {z}")]
    NonPositiveStrength { z: f64, k: f64 },

    #[error("{outside} of {total} samples fall outside the grid")]
    OutsideGrid { outside: usize, total: usize },

    #[error("perturbative order {order} exceeds the cap {cap}")]
    OrderCap { order: usize, cap: usize },

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),
}

pub type Result<T> = std::result::Result<T, CqError>;
