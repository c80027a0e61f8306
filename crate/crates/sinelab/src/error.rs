use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("quadrature did not converge: {0}")]
    NonFinite(String),
    #[error("support [{lo}, {hi}] of the test function exceeds the window [{w_lo}, {w_hi}]")]
    SupportExceedsWindow { lo: f64, hi: f64, w_lo: f64, w_hi: f64 },
    #[error("interval [{a}, {b}] is not inside the window [{w_lo}, {w_hi}]")]
    OutOfWindow { a: f64, b: f64, w_lo: f64, w_hi: f64 },
    #[error("density evaluated at {x}, too close to the endpoint of [-{lambda}, {lambda}]")]
    EndpointSingularity { x: f64, lambda: f64 },
    #[error("scale separation violated: ell = {ell}, lambda = {lambda} ({reason})")]
    ScaleSeparationViolated { ell: f64, lambda: f64, reason: &'static str },
    #[error("root not bracketed for target {0}")]
    RootNotBracketed(f64),
    #[error("coincident points at {0}")]
    CoincidentPoints(f64),
    #[error("truncation p = {p} exceeds the exterior window half-width {half_width}")]
    TruncationExceedsWindow { p: f64, half_width: f64 },
    #[error("insufficient bulk: {0}")]
    InsufficientBulk(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
