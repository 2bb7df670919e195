//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Operator or state dimensions are incompatible with the requested
    /// operation or layout.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A factor index lies outside the layout.
    #[error("factor slot {slot} out of range for a {nfactors}-factor layout")]
    SlotOutOfRange { slot: usize, nfactors: usize },

    /// A truncated expansion lost more weight than allowed.
    #[error("truncation deficit {deficit:.3e} exceeds tolerance {tol:.3e}")]
    Truncation { deficit: f64, tol: f64 },

    /// A matrix required to be Hermitian is not, beyond tolerance.
    #[error("matrix deviates from Hermiticity by {dev:.3e}")]
    NotHermitian { dev: f64 },

    /// A density matrix failed validation.
    #[error("invalid density matrix: {0}")]
    InvalidState(String),

    /// A parameter value is outside its admissible range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The adaptive integrator could not honor the error tolerances.
    #[error("step size underflow at t = {t} (h = {h:.3e})")]
    StepSizeUnderflow { t: f64, h: f64 },

    /// Trace of the evolving state drifted beyond tolerance; the evolution is
    /// not trusted (no renormalization is ever applied).
    #[error("trace drift {drift:.3e} exceeds {tol:.3e} at t = {t}")]
    TraceDrift { t: f64, drift: f64, tol: f64 },

    /// The integrator exhausted its step budget before reaching the end of
    /// the grid.
    #[error("step budget of {budget} steps exhausted at t = {t}")]
    StepBudget { t: f64, budget: usize },

    /// Population reached the edge of a truncated factor during evolution.
    #[error("truncation leakage {leak:.3e} in factor {slot} exceeds {tol:.3e} at t = {t}")]
    Leakage {
        t: f64,
        slot: usize,
        leak: f64,
        tol: f64,
    },

    /// A measurement outcome has negligible probability; conditioning on it
    /// is ill-defined.
    #[error("degenerate measurement outcome: p = {p:.3e}")]
    DegenerateOutcome { p: f64 },

    /// Quadrature failed to converge while assembling measurement effects.
    #[error("quadrature did not converge: {0}")]
    QuadratureNonConvergence(String),

    /// Eigensolver failure.
    #[error("eigendecomposition failed: {0}")]
    EigFailure(String),

    /// Scenario or sweep configuration error.
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
