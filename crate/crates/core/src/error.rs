//! Crate-wide error type.
//!
//! Geometry, optimization, and configuration errors are all explicit: routines
//! return `Result` instead of silently patching bad input (the one deliberate
//! exception is the damped pseudo-inverse, whose regularization term exists
//! precisely to absorb singular Jacobians).

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A vector or matrix argument had the wrong dimension.
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// A kinematic chain description violated a structural invariant.
    #[error("invalid chain: {0}")]
    InvalidChain(String),

    /// A QP violated a structural invariant (non-PD Hessian, NaN entries,
    /// inconsistent bounds, ...).
    #[error("invalid QP: {0}")]
    InvalidQp(String),

    /// A control point and an obstacle center (nearly) coincide, so the
    /// barrier direction is undefined. Carries the measured separation.
    #[error("degenerate barrier direction: separation {separation} below tolerance")]
    DegenerateDirection { separation: f64 },

    /// A scenario configuration failed validation. The message names the
    /// offending field.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Even the relaxed program had no feasible point (the protected
    /// constraints conflict with each other or with the velocity bounds) and
    /// the filter was configured to fail instead of stopping the arm.
    #[error("safety emergency at t = {time}: {detail}")]
    SafetyEmergency { time: f64, detail: String },

    /// Configuration or replay file could not be read or parsed.
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
