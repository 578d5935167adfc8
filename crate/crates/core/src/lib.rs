//! Analytic and numerical machinery for parametric down-conversion driven by
//! two non-collinear pump waves.
//!
//! Internal units: lengths in μm, times in fs, angles in rad. Wavenumbers are
//! therefore in μm⁻¹ and angular frequencies in rad·fs⁻¹.
//!
//! Module map:
//! - [`dispersion`]: Sellmeier sets, wavenumbers, walk-off and pump geometry.
//! - [`phase_geometry`]: phase mismatch and the phase-matching surfaces.
//! - [`mode_solver`]: shared/coupled modes, resonances, Poynting direction.
//! - [`mode_dynamics`]: 3- and 4-mode evolution and the quadruplet decomposition.
//! - [`gaussian_witness`]: covariance-matrix states and entanglement witnesses.
//! - [`field_sim`]: split-step simulator of the coupled propagation equations.

pub mod dispersion;
pub mod error;
pub mod field_sim;
pub mod gaussian_witness;
pub mod mode_dynamics;
pub mod mode_solver;
pub mod numeric;
pub mod phase_geometry;
pub mod units;

pub use error::{Error, Result};
