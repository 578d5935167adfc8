//! TOML run configuration. Angles are in degrees and wavelengths in nm here;
//! everything is converted to the core units (μm, fs, rad) in this module
//! and nowhere else.

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use dppdc_core::dispersion::{CrystalKind, CrystalModel};
use dppdc_core::field_sim::{
    PumpProfile, PumpPulseSpec, SeedMode, SeedSpec, SimConfig, SimGrid, SimOptions,
};
use dppdc_core::mode_solver::{in_plane_shared_frequency, shared_tolerance, PumpConfig, YBranch};
use dppdc_core::units::{angular_frequency, mm_to_um, nm_to_um, per_mm_to_per_um};

use crate::CliError;

/// Search interval (rad/fs) for the in-plane shared frequency.
pub const SHARED_SEARCH: (f64, f64) = (0.01, 1.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub crystal: CrystalSection,
    pub pumps: PumpSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamics: Option<DynamicsSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimSection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrystalSection {
    /// "pplt_type0" or "bbo_type1"; selects the embedded Sellmeier set.
    pub kind: CrystalKind,
    pub pump_wavelength_nm: f64,
    pub length_mm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cut_angle_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poling_period_um: Option<f64>,
    /// Re-solve the cut angle (BBO) or poling period (PPLT) for exact
    /// collinear phase matching at degeneracy.
    #[serde(default)]
    pub collinear_design: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PumpSection {
    pub tilt1_deg: f64,
    pub tilt2_deg: f64,
    #[serde(default)]
    pub beta_deg: f64,
    /// Pump amplitudes; in the simulator, √photons per grid cell.
    #[serde(default = "one")]
    pub amplitude1: f64,
    #[serde(default = "one")]
    pub amplitude2: f64,
    #[serde(default)]
    pub phase1_deg: f64,
    #[serde(default)]
    pub phase2_deg: f64,
    /// ḡ = √(|g₁|² + |g₂|²) in mm⁻¹, with a common coupling χ for both pumps.
    pub gain_per_mm: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    /// Shortest signal wavelength of the surface Ω grid.
    pub lambda_short_nm: f64,
    pub n_omega_half: usize,
    pub n_azimuth: usize,
    /// Signal wavelengths at which clusters are solved.
    #[serde(default)]
    pub signal_nm: Vec<f64>,
    /// Also solve at the conjugate frequency −Ω of every listed wavelength.
    #[serde(default = "yes")]
    pub include_conjugate: bool,
    #[serde(default = "both_branches")]
    pub y_branches: Vec<YBranch>,
    /// Distance (μm⁻¹) below which a coupled mode merges with a shared mode;
    /// defaults to the phase-matching tolerance of the crystal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merge_tol_per_um: Option<f64>,
}

fn yes() -> bool {
    true
}

fn both_branches() -> Vec<YBranch> {
    vec![YBranch::Plus, YBranch::Minus]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSection {
    pub rho_min: f64,
    pub rho_max: f64,
    pub rho_points: usize,
    #[serde(default)]
    pub rho_log: bool,
    /// Witness z range in units of 1/ḡ.
    pub z_max_gbar: f64,
    pub z_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub nx: usize,
    #[serde(default = "one_usize")]
    pub ny: usize,
    pub nt: usize,
    /// Exactly one of `dx_um` and `pump_separation_bins` (q step set so that
    /// the two pumps are this many bins apart).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dx_um: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pump_separation_bins: Option<u32>,
    #[serde(default = "one")]
    pub dy_um: f64,
    /// Exactly one of `dt_fs` and `shared_frequency_bin` (Ω step set so that
    /// the in-plane shared frequency falls on this bin).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_fs: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shared_frequency_bin: Option<u32>,
    pub n_steps: usize,
    /// Vacuum-noise realizations; mutually exclusive with `seed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub realizations: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub seed: Vec<SeedSection>,
    #[serde(default)]
    pub undepleted: bool,
    pub checkpoint_every_mm: f64,
    #[serde(default = "plane_wave")]
    pub pump_profile: PumpProfile,
    /// Start of the gain fit (mm); half the crystal by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain_fit_from_mm: Option<f64>,
    /// Write the fields of realization 0 at every checkpoint.
    #[serde(default)]
    pub write_checkpoints: bool,
}

fn one_usize() -> usize {
    1
}

fn plane_wave() -> PumpProfile {
    PumpProfile::PlaneWave
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSection {
    pub lambda_nm: f64,
    pub theta_x_deg: f64,
    #[serde(default)]
    pub theta_y_deg: f64,
    pub amplitude: f64,
    #[serde(default)]
    pub phase_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: default_dir() }
    }
}

fn default_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// A parsed config together with its source text, for error locations.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub source: String,
}

impl LoadedConfig {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let source = std::fs::read_to_string(path).map_err(|e| CliError::Config {
            line: None,
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::from_str(&source)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn from_str(source: &str) -> Result<Self, CliError> {
        let config: RunConfig = toml::from_str(source).map_err(|e| CliError::Config {
            line: e.span().map(|s| line_of(source, s.start)),
            message: e.message().to_string(),
        })?;
        Ok(LoadedConfig {
            config,
            source: source.to_string(),
        })
    }

    /// Error pointing at `key` of `[section]`, or at the section header when
    /// the key is absent.
    pub fn error(&self, section: &str, key: &str, message: impl Into<String>) -> CliError {
        CliError::Config {
            line: locate(&self.source, section, key),
            message: format!("{section}.{key}: {}", message.into()),
        }
    }

    pub fn crystal(&self) -> Result<CrystalModel, CliError> {
        let c = &self.config.crystal;
        let mut model = match c.kind {
            CrystalKind::BboTypeI => CrystalModel::bbo_reference(),
            CrystalKind::PpltType0 => CrystalModel::pplt_reference(),
        };
        model.pump_wavelength_um = nm_to_um(c.pump_wavelength_nm);
        if let Some(t) = c.temperature_c {
            model.temperature_c = t;
        }
        match c.kind {
            CrystalKind::BboTypeI => {
                if c.poling_period_um.is_some() {
                    return Err(self.error("crystal", "poling_period_um", "BBO is not poled"));
                }
                if let Some(g) = c.cut_angle_deg {
                    model.cut_angle = g.to_radians();
                }
            }
            CrystalKind::PpltType0 => {
                if c.cut_angle_deg.is_some_and(|g| g != 90.0) {
                    return Err(self.error("crystal", "cut_angle_deg", "PPLT propagates at 90° to the axis"));
                }
                if let Some(p) = c.poling_period_um {
                    model.poling_period = Some(p);
                }
            }
        }
        if !(c.length_mm > 0.0 && c.length_mm.is_finite()) {
            return Err(self.error("crystal", "length_mm", "must be positive"));
        }
        model.validate().map_err(|e| self.error("crystal", "kind", e.to_string()))?;
        if c.collinear_design {
            model = model
                .with_collinear_design()
                .map_err(|e| self.error("crystal", "collinear_design", e.to_string()))?;
        }
        Ok(model)
    }

    pub fn crystal_length_um(&self) -> f64 {
        mm_to_um(self.config.crystal.length_mm)
    }

    pub fn pump(&self) -> Result<PumpConfig, CliError> {
        let p = &self.config.pumps;
        let norm = p.amplitude1.hypot(p.amplitude2);
        if !(p.amplitude1 >= 0.0 && p.amplitude2 >= 0.0 && norm > 0.0 && norm.is_finite()) {
            return Err(self.error("pumps", "amplitude1", "amplitudes must be non-negative and not both zero"));
        }
        if !(p.gain_per_mm > 0.0 && p.gain_per_mm.is_finite()) {
            return Err(self.error("pumps", "gain_per_mm", "must be positive"));
        }
        let chi = per_mm_to_per_um(p.gain_per_mm) / norm;
        PumpConfig::new(
            p.tilt1_deg.to_radians(),
            p.tilt2_deg.to_radians(),
            p.beta_deg.to_radians(),
            Complex64::from_polar(p.amplitude1, p.phase1_deg.to_radians()),
            Complex64::from_polar(p.amplitude2, p.phase2_deg.to_radians()),
            chi,
            chi,
        )
        .map_err(|e| self.error("pumps", "tilt1_deg", e.to_string()))
    }

    pub fn solver(&self) -> Result<&SolverSection, CliError> {
        let s = self.config.solver.as_ref().ok_or_else(|| missing("solver"))?;
        if s.n_azimuth == 0 {
            return Err(self.error("solver", "n_azimuth", "must be at least 1"));
        }
        if !(s.lambda_short_nm > 0.0) {
            return Err(self.error("solver", "lambda_short_nm", "must be positive"));
        }
        if s.signal_nm.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(self.error("solver", "signal_nm", "wavelengths must be positive"));
        }
        Ok(s)
    }

    /// Largest Ω of the surface grid, from the shortest signal wavelength.
    pub fn omega_max(&self, model: &CrystalModel) -> Result<f64, CliError> {
        let s = self.solver()?;
        let w = angular_frequency(nm_to_um(s.lambda_short_nm)) - model.signal_frequency();
        if !(w > 0.0 && w < model.signal_frequency()) {
            return Err(self.error(
                "solver",
                "lambda_short_nm",
                format!("must lie between λ_p and 2λ_p = {} nm", 2.0 * self.config.crystal.pump_wavelength_nm),
            ));
        }
        Ok(w)
    }

    pub fn merge_tol(&self) -> Result<f64, CliError> {
        Ok(self
            .solver()?
            .merge_tol_per_um
            .unwrap_or_else(|| shared_tolerance(self.crystal_length_um())))
    }

    pub fn dynamics(&self) -> Result<&DynamicsSection, CliError> {
        let d = self.config.dynamics.as_ref().ok_or_else(|| missing("dynamics"))?;
        if d.rho_points < 2 {
            return Err(self.error("dynamics", "rho_points", "need at least 2 points"));
        }
        if !(d.rho_min >= 0.0 && d.rho_max > d.rho_min && d.rho_max.is_finite()) {
            return Err(self.error("dynamics", "rho_max", "need 0 ≤ rho_min < rho_max"));
        }
        if d.rho_log && d.rho_min <= 0.0 {
            return Err(self.error("dynamics", "rho_min", "logarithmic sweep needs rho_min > 0"));
        }
        if d.z_points < 2 || !(d.z_max_gbar > 0.0) {
            return Err(self.error("dynamics", "z_points", "need at least 2 points and z_max_gbar > 0"));
        }
        Ok(d)
    }

    pub fn rho_grid(&self) -> Result<Vec<f64>, CliError> {
        let d = self.dynamics()?;
        let n = d.rho_points - 1;
        Ok((0..=n)
            .map(|i| {
                let f = i as f64 / n as f64;
                if d.rho_log {
                    d.rho_min * (d.rho_max / d.rho_min).powf(f)
                } else {
                    d.rho_min + (d.rho_max - d.rho_min) * f
                }
            })
            .collect())
    }

    /// Simulator configuration with the grid steps resolved.
    pub fn sim(&self, model: &CrystalModel, pump: &PumpConfig) -> Result<SimConfig, CliError> {
        let s = self.config.sim.as_ref().ok_or_else(|| missing("sim"))?;
        let kp = model.carrier_pump_wavenumber()?;
        let dx = match (s.dx_um, s.pump_separation_bins) {
            (Some(dx), None) => dx,
            (None, Some(n)) if n > 0 => {
                let dq = kp * (pump.tilt2 - pump.tilt1).abs() / n as f64;
                2.0 * std::f64::consts::PI / (s.nx as f64 * dq)
            }
            _ => {
                return Err(self.error(
                    "sim",
                    "dx_um",
                    "give exactly one of dx_um and pump_separation_bins (> 0)",
                ))
            }
        };
        let dt = match (s.dt_fs, s.shared_frequency_bin) {
            (Some(dt), None) => dt,
            (None, Some(n)) if n > 0 => {
                let omega = in_plane_shared_frequency(model, pump, SHARED_SEARCH.0, SHARED_SEARCH.1)
                    .map_err(|e| self.error("sim", "shared_frequency_bin", e.to_string()))?;
                2.0 * std::f64::consts::PI / (s.nt as f64 * omega / n as f64)
            }
            _ => {
                return Err(self.error(
                    "sim",
                    "dt_fs",
                    "give exactly one of dt_fs and shared_frequency_bin (> 0)",
                ))
            }
        };
        let grid = SimGrid {
            nx: s.nx,
            ny: s.ny,
            nt: s.nt,
            dx,
            dy: s.dy_um,
            dt,
            crystal_length: self.crystal_length_um(),
            n_steps: s.n_steps,
        };
        grid.validate().map_err(|e| self.error("sim", "nx", e.to_string()))?;

        let seed = match (s.realizations, s.seed.is_empty()) {
            (Some(r), true) if r > 0 => SeedSpec::StochasticVacuum { realizations: r },
            (None, false) => {
                let mut modes = Vec::with_capacity(s.seed.len());
                for m in &s.seed {
                    let omega = angular_frequency(nm_to_um(m.lambda_nm)) - model.signal_frequency();
                    let ks = model
                        .signal_wavenumber(omega)
                        .map_err(|e| self.error("sim", "seed", e.to_string()))?;
                    modes.push(SeedMode {
                        qx: ks * m.theta_x_deg.to_radians(),
                        qy: ks * m.theta_y_deg.to_radians(),
                        omega,
                        amplitude: Complex64::from_polar(m.amplitude, m.phase_deg.to_radians()),
                    });
                }
                SeedSpec::CoherentSeed { modes }
            }
            _ => {
                return Err(self.error(
                    "sim",
                    "realizations",
                    "give either realizations (> 0) for vacuum noise or [[sim.seed]] modes",
                ))
            }
        };

        let every = mm_to_um(s.checkpoint_every_mm);
        let length = grid.crystal_length;
        if !(every > 0.0 && every <= length) {
            return Err(self.error("sim", "checkpoint_every_mm", "must lie in (0, length_mm]"));
        }
        let count = (length / every + 1e-9).floor() as usize;
        let mut checkpoints: Vec<f64> = (0..=count).map(|k| k as f64 * every).collect();
        if (length - checkpoints[count]).abs() > 1e-9 * length {
            checkpoints.push(length);
        }

        let cfg = SimConfig {
            model: model.clone(),
            grid,
            pumps: PumpPulseSpec {
                pump: *pump,
                profile: s.pump_profile,
            },
            seed,
            options: SimOptions {
                undepleted: s.undepleted,
                checkpoints,
                keep_fields: s.write_checkpoints,
            },
        };
        cfg.validate().map_err(|e| self.error("sim", "pump_profile", e.to_string()))?;
        Ok(cfg)
    }

    pub fn gain_fit_from_um(&self) -> f64 {
        match self.config.sim.as_ref().and_then(|s| s.gain_fit_from_mm) {
            Some(mm) => mm_to_um(mm),
            None => 0.5 * self.crystal_length_um(),
        }
    }

    /// Canonical TOML of the parsed config (hashed and copied into outputs).
    pub fn canonical(&self) -> String {
        toml::to_string(&self.config).expect("config serializes")
    }
}

fn missing(section: &str) -> CliError {
    CliError::Config {
        line: None,
        message: format!("this command needs a [{section}] section"),
    }
}

/// 1-based line of a byte offset.
fn line_of(source: &str, offset: usize) -> usize {
    source[..offset.min(source.len())].matches('\n').count() + 1
}

/// Line of `key = …` inside `[section]`, else of the section header.
fn locate(source: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut header = None;
    for (i, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[') {
            current = name.trim_start_matches('[').trim_end_matches(']').trim().to_string();
            if current == section && header.is_none() {
                header = Some(i + 1);
            }
            continue;
        }
        if current == section || current.starts_with(&format!("{section}.")) {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    header
}
