use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum FracError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unsupported expression tag: {0}")]
    UnsupportedTag(String),
    #[error("non-finite sample at node {index:?} (tag {tag})")]
    NonFiniteSample { tag: String, index: Vec<usize> },
    #[error("point {0:?} too close to the sampling-box boundary (margin {1})")]
    PointNearBoundary(Vec<f64>, f64),
    #[error("exterior tag `{0}` has no far-field tail formula for s = {1}")]
    MissingTailFormula(String, f64),
    #[error("empty admissible control set: {0}")]
    EmptyControlSet(String),
    #[error("control matrix violates {0}")]
    InadmissibleControl(String),
    #[error("point lies on the reflection plane (divergent integral)")]
    PointOnPlane,
    #[error("monotone stencil violation: {0}")]
    MonotoneViolation(String),
    #[error("solver did not converge: {0}")]
    NoConvergence(String),
    #[error("hypothesis (H2) fails, no M0 available")]
    HypothesisFailed,
    #[error("shift {0} exceeds the slab margin {1}")]
    ShiftExceedsSlab(f64, f64),
    #[error("direction must be axis-aligned")]
    DirectionNotAxis,
    #[error("dimension {0} not supported (expected 2 or 3)")]
    UnsupportedDimension(usize),
    #[error("geometry does not fit inside the grid box with margin {0}")]
    GeometryTooLarge(f64),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, FracError>;
