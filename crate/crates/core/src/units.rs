//! Unit conventions shared by every module.

use std::f64::consts::PI;

/// Speed of light in vacuum, μm/fs.
pub const SPEED_OF_LIGHT: f64 = 0.299_792_458;

/// Angular frequency (rad/fs) of light with the given vacuum wavelength (μm).
pub fn angular_frequency(wavelength_um: f64) -> f64 {
    2.0 * PI * SPEED_OF_LIGHT / wavelength_um
}

/// Vacuum wavelength (μm) of light at the given angular frequency (rad/fs).
pub fn wavelength(angular_frequency: f64) -> f64 {
    2.0 * PI * SPEED_OF_LIGHT / angular_frequency
}

pub fn nm_to_um(nm: f64) -> f64 {
    nm * 1e-3
}

pub fn mm_to_um(mm: f64) -> f64 {
    mm * 1e3
}

/// Converts a rate given per mm into per μm.
pub fn per_mm_to_per_um(per_mm: f64) -> f64 {
    per_mm * 1e-3
}
