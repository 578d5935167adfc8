use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("wavelength {wavelength_um} μm is outside the {set} validity window [{min_um}, {max_um}] μm")]
    OutOfWindow {
        set: String,
        wavelength_um: f64,
        min_um: f64,
        max_um: f64,
    },

    #[error("Sellmeier set {0} has no ordinary-index table")]
    MissingOrdinary(String),

    #[error("evanescent mode: |q| = {q} μm⁻¹ is not below k = {k} μm⁻¹ (margin 1e-6·k)")]
    Evanescent { q: f64, k: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no resonance: |θp1 − θp2| = {tilt_difference} rad exceeds 2ρ₀ = {limit} rad")]
    NoResonance { tilt_difference: f64, limit: f64 },

    #[error("unphysical Gaussian state: minimum symplectic eigenvalue {min_eigenvalue}")]
    Unphysical { min_eigenvalue: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("numerical failure at z = {z} μm: {detail}")]
    NumericalFailure { z: f64, detail: String },

    #[error("root finding failed: {0}")]
    RootNotFound(String),
}
