//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the simulation and analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension {dim}: {reason}")]
    InvalidDimension { dim: usize, reason: &'static str },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("operator is not Hermitian (max |O - O^dag| = {deviation:.3e})")]
    NotHermitian { deviation: f64 },

    #[error("operator has trace {trace:.3e}, beyond the traceless tolerance")]
    NotTraceless { trace: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("coefficient vector has length {got}, expected {expected}")]
    CoefficientLength { got: usize, expected: usize },

    #[error("integration diverged at step {step} (t = {time:.6e})")]
    IntegrationDiverged { step: usize, time: f64 },

    #[error("no limit cycle detected within the search window")]
    NoCycleDetected,

    #[error("fixed point detected: the relaxed state does not move physically")]
    FixedPointDetected,

    #[error(
        "asymptotic phase did not converge: on-cycle overlap {overlap:.6} below threshold {threshold}"
    )]
    PhaseNotConverged { overlap: f64, threshold: f64 },

    #[error(
        "finite-difference phase response inconsistent: Z(g) = {coarse:.6e}, Z(g/2) = {fine:.6e}"
    )]
    PrcInconsistent { coarse: f64, fine: f64 },

    #[error("invalid density matrix: {0}")]
    InvalidDensityMatrix(String),

    #[error("distribution is not normalizable: {0}")]
    NotNormalizable(&'static str),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
