//! Refractive indices, wavenumbers, walk-off and pump-geometry angle relations.
//!
//! Two crystal configurations are supported:
//! - [`CrystalKind::PpltType0`]: e → e e quasi-phase-matched LiTaO₃, with all
//!   waves propagating (nearly) perpendicular to the optical axis. The index
//!   is treated as direction independent (non-critical phase matching).
//! - [`CrystalKind::BboTypeI`]: e → o o birefringent phase matching in BBO; the
//!   pump index depends on the angle γ between its wave-vector and the axis.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::mode_solver::PumpConfig;
use crate::numeric::brent;
use crate::units::{wavelength, SPEED_OF_LIGHT};
use crate::{Error, Result};

/// Dispersion formula for n²(λ), λ in μm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum SellmeierFormula {
    /// n² = a + b / (λ² − c) − d·λ²
    SinglePoleIr { a: f64, b: f64, c: f64, d: f64 },
    /// n² = a₁ + b₁f + (a₂ + b₂f) / (λ² − (a₃ + b₃f)²) + (a₄ + b₄f) / (λ² − a₅²) − a₆λ²
    /// with f = (T − t_ref)(T + t_shift), T in °C.
    ThermalTwoPole {
        a: [f64; 6],
        b: [f64; 4],
        t_ref: f64,
        t_shift: f64,
    },
}

impl SellmeierFormula {
    pub fn n_squared(&self, wavelength_um: f64, temperature_c: f64) -> f64 {
        let l2 = wavelength_um * wavelength_um;
        match *self {
            SellmeierFormula::SinglePoleIr { a, b, c, d } => a + b / (l2 - c) - d * l2,
            SellmeierFormula::ThermalTwoPole { a, b, t_ref, t_shift } => {
                let f = (temperature_c - t_ref) * (temperature_c + t_shift);
                let uv_pole = a[2] + b[2] * f;
                a[0] + b[0] * f + (a[1] + b[1] * f) / (l2 - uv_pole * uv_pole)
                    + (a[3] + b[3] * f) / (l2 - a[4] * a[4])
                    - a[5] * l2
            }
        }
    }

    pub fn index(&self, wavelength_um: f64, temperature_c: f64) -> f64 {
        self.n_squared(wavelength_um, temperature_c).sqrt()
    }
}

/// A named dispersion table with its literature source and validity window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SellmeierSet {
    pub name: String,
    pub citation: String,
    #[serde(default)]
    pub ordinary: Option<SellmeierFormula>,
    pub extraordinary: SellmeierFormula,
    /// Supported wavelength window [min, max] in μm.
    pub window_um: [f64; 2],
}

impl SellmeierSet {
    /// β-BaB₂O₄, temperature independent.
    pub fn bbo_kato_1986() -> Self {
        SellmeierSet {
            name: "BBO (Kato 1986)".into(),
            citation: "K. Kato, \"Second-harmonic generation to 2048 Å in β-BaB2O4\", \
                       IEEE J. Quantum Electron. 22, 1013 (1986)"
                .into(),
            ordinary: Some(SellmeierFormula::SinglePoleIr {
                a: 2.7359,
                b: 0.01878,
                c: 0.01822,
                d: 0.01354,
            }),
            extraordinary: SellmeierFormula::SinglePoleIr {
                a: 2.3753,
                b: 0.01224,
                c: 0.01667,
                d: 0.01516,
            },
            window_um: [0.20, 2.6],
        }
    }

    /// Extraordinary index of MgO-doped LiTaO₃ with temperature dependence.
    /// No ordinary table is embedded: the e → e e process never needs it.
    pub fn litao3_dolev_2009() -> Self {
        SellmeierSet {
            name: "LiTaO3 (Dolev 2009)".into(),
            citation: "I. Dolev, A. Ganany-Padowicz, O. Gayer, A. Arie, J. Mangin, G. Gadret, \
                       \"Linear and nonlinear optical properties of MgO:LiTaO3\", \
                       Appl. Phys. B 96, 423 (2009)"
                .into(),
            ordinary: None,
            extraordinary: SellmeierFormula::ThermalTwoPole {
                a: [4.5615, 0.08488, 0.1927, 5.5832, 8.3067, 0.021696],
                b: [4.782e-7, 3.0913e-8, 2.7326e-8, 1.4837e-5],
                t_ref: 24.5,
                t_shift: 570.82,
            },
            window_um: [0.32, 4.0],
        }
    }

    fn check_window(&self, wavelength_um: f64) -> Result<()> {
        let [min_um, max_um] = self.window_um;
        if wavelength_um.is_finite() && wavelength_um >= min_um && wavelength_um <= max_um {
            Ok(())
        } else {
            Err(Error::OutOfWindow {
                set: self.name.clone(),
                wavelength_um,
                min_um,
                max_um,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrystalKind {
    #[serde(rename = "pplt_type0")]
    PpltType0,
    #[serde(rename = "bbo_type1")]
    BboTypeI,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarization {
    Ordinary,
    Extraordinary,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveIndexQuery {
    pub wavelength_um: f64,
    /// Angle between wave-vector and optical axis; ignored for ordinary waves.
    pub gamma: f64,
    pub polarization: Polarization,
}

/// Dispersion and geometry of the nonlinear medium.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrystalModel {
    pub kind: CrystalKind,
    pub sellmeier: SellmeierSet,
    /// Angle γ₀ between the mean propagation direction z and the optical axis.
    pub cut_angle: f64,
    /// Poling period in μm; present only for quasi-phase-matched media.
    pub poling_period: Option<f64>,
    pub temperature_c: f64,
    pub pump_wavelength_um: f64,
}

impl CrystalModel {
    pub fn new(
        kind: CrystalKind,
        sellmeier: SellmeierSet,
        cut_angle: f64,
        poling_period: Option<f64>,
        temperature_c: f64,
        pump_wavelength_um: f64,
    ) -> Result<Self> {
        let model = CrystalModel {
            kind,
            sellmeier,
            cut_angle,
            poling_period,
            temperature_c,
            pump_wavelength_um,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        match (self.kind, self.poling_period) {
            (CrystalKind::PpltType0, Some(p)) if p > 0.0 && p.is_finite() => {}
            (CrystalKind::PpltType0, _) => {
                return Err(Error::InvalidParameter(
                    "PPLT requires a positive poling period".into(),
                ))
            }
            (CrystalKind::BboTypeI, None) => {}
            (CrystalKind::BboTypeI, Some(_)) => {
                return Err(Error::InvalidParameter(
                    "BBO is not poled: poling period must be absent".into(),
                ))
            }
        }
        if !(self.cut_angle > 0.0 && self.cut_angle <= FRAC_PI_2) {
            return Err(Error::InvalidParameter(format!(
                "cut angle {} rad outside (0, π/2]",
                self.cut_angle
            )));
        }
        if self.kind == CrystalKind::BboTypeI && self.sellmeier.ordinary.is_none() {
            return Err(Error::MissingOrdinary(self.sellmeier.name.clone()));
        }
        self.sellmeier.check_window(self.pump_wavelength_um)?;
        self.sellmeier.check_window(2.0 * self.pump_wavelength_um)?;
        Ok(())
    }

    /// BBO cut at 33.44° for the collinear degenerate 352 nm → 704 nm process.
    pub fn bbo_reference() -> Self {
        CrystalModel {
            kind: CrystalKind::BboTypeI,
            sellmeier: SellmeierSet::bbo_kato_1986(),
            cut_angle: 33.44f64.to_radians(),
            poling_period: None,
            temperature_c: 25.0,
            pump_wavelength_um: 0.352,
        }
    }

    /// PPLT slab, 532 nm pump, 7.79 μm poling at 75 °C.
    pub fn pplt_reference() -> Self {
        CrystalModel {
            kind: CrystalKind::PpltType0,
            sellmeier: SellmeierSet::litao3_dolev_2009(),
            cut_angle: FRAC_PI_2,
            poling_period: Some(7.79),
            temperature_c: 75.0,
            pump_wavelength_um: 0.532,
        }
    }

    /// Same crystal with the free design parameter (cut angle for BBO, poling
    /// period for PPLT) re-solved so that Δcoll(0) = 0.
    pub fn with_collinear_design(&self) -> Result<Self> {
        let mut model = self.clone();
        match self.kind {
            CrystalKind::BboTypeI => {
                let target = self.signal_wavenumber(0.0)? * 2.0;
                let omega_p = self.pump_frequency();
                let f = |g: f64| {
                    self.extraordinary_index(self.pump_wavelength_um, g)
                        .map(|n| n * omega_p / SPEED_OF_LIGHT - target)
                        .unwrap_or(f64::NAN)
                };
                model.cut_angle = brent(f, 1e-3, FRAC_PI_2, 1e-15)?;
            }
            CrystalKind::PpltType0 => {
                let mismatch = self.carrier_pump_wavenumber()? - 2.0 * self.signal_wavenumber(0.0)?;
                if mismatch <= 0.0 {
                    return Err(Error::InvalidParameter(
                        "no positive grating vector phase-matches the degenerate process".into(),
                    ));
                }
                model.poling_period = Some(2.0 * std::f64::consts::PI / mismatch);
            }
        }
        Ok(model)
    }

    pub fn is_noncritical(&self) -> bool {
        self.kind == CrystalKind::PpltType0
    }

    /// Reciprocal grating vector G_z = 2π/Λ (0 without poling).
    pub fn grating_wavenumber(&self) -> f64 {
        self.poling_period
            .map(|p| 2.0 * std::f64::consts::PI / p)
            .unwrap_or(0.0)
    }

    pub fn pump_frequency(&self) -> f64 {
        crate::units::angular_frequency(self.pump_wavelength_um)
    }

    /// Degenerate signal carrier ω_s = ω_p / 2.
    pub fn signal_frequency(&self) -> f64 {
        0.5 * self.pump_frequency()
    }

    fn principal_index(&self, wavelength_um: f64, polarization: Polarization) -> Result<f64> {
        self.sellmeier.check_window(wavelength_um)?;
        let formula = match polarization {
            Polarization::Ordinary => self
                .sellmeier
                .ordinary
                .as_ref()
                .ok_or_else(|| Error::MissingOrdinary(self.sellmeier.name.clone()))?,
            Polarization::Extraordinary => &self.sellmeier.extraordinary,
        };
        Ok(formula.index(wavelength_um, self.temperature_c))
    }

    /// Uniaxial index 1/n² = cos²γ/n_o² + sin²γ/n_e² for any γ.
    fn extraordinary_index(&self, wavelength_um: f64, gamma: f64) -> Result<f64> {
        let ne = self.principal_index(wavelength_um, Polarization::Extraordinary)?;
        if (gamma - FRAC_PI_2).abs() < 1e-15 {
            return Ok(ne);
        }
        let no = self.principal_index(wavelength_um, Polarization::Ordinary)?;
        let (s, c) = gamma.sin_cos();
        Ok(1.0 / (c * c / (no * no) + s * s / (ne * ne)).sqrt())
    }

    pub fn refractive_index(&self, query: &WaveIndexQuery) -> Result<f64> {
        match query.polarization {
            Polarization::Ordinary => self.principal_index(query.wavelength_um, Polarization::Ordinary),
            Polarization::Extraordinary => {
                if !(0.0..=FRAC_PI_2).contains(&query.gamma) {
                    return Err(Error::InvalidParameter(format!(
                        "γ = {} rad outside [0, π/2]",
                        query.gamma
                    )));
                }
                self.extraordinary_index(query.wavelength_um, query.gamma)
            }
        }
    }

    /// Signal index at the absolute angular frequency ω.
    fn signal_index_at(&self, omega: f64) -> Result<f64> {
        let lambda = wavelength(omega);
        match self.kind {
            CrystalKind::BboTypeI => self.principal_index(lambda, Polarization::Ordinary),
            CrystalKind::PpltType0 => self.principal_index(lambda, Polarization::Extraordinary),
        }
    }

    /// k_s(Ω) = n(ω_s + Ω)·(ω_s + Ω)/c.
    pub fn signal_wavenumber(&self, omega_offset: f64) -> Result<f64> {
        let omega = self.signal_frequency() + omega_offset;
        if omega <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "offset {omega_offset} rad/fs gives non-positive frequency"
            )));
        }
        Ok(self.signal_index_at(omega)? * omega / SPEED_OF_LIGHT)
    }

    /// Pump wavenumber at frequency ω_p + Ω travelling at angle γ to the axis.
    pub fn pump_wavenumber(&self, omega_offset: f64, gamma: f64) -> Result<f64> {
        let omega = self.pump_frequency() + omega_offset;
        if omega <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "offset {omega_offset} rad/fs gives non-positive frequency"
            )));
        }
        let lambda = wavelength(omega);
        let n = if self.is_noncritical() {
            self.principal_index(lambda, Polarization::Extraordinary)?
        } else {
            self.extraordinary_index(lambda, gamma)?
        };
        Ok(n * omega / SPEED_OF_LIGHT)
    }

    /// Reference pump wavenumber k_p at the cut angle.
    pub fn carrier_pump_wavenumber(&self) -> Result<f64> {
        self.pump_wavenumber(0.0, self.cut_angle)
    }

    /// Wavenumber of a monochromatic pump wave tilted by `tilt` in the
    /// direction rotated by `beta` in the input facet.
    pub fn tilted_pump_wavenumber(&self, tilt: f64, beta: f64) -> Result<f64> {
        self.pump_wavenumber(0.0, pump_gamma(tilt, beta, self.cut_angle))
    }

    /// Walk-off ρ_γ = −(1/k)(dk/dγ) of the extraordinary pump at angle γ,
    /// from the analytic derivative of the uniaxial index.
    pub fn walk_off(&self, gamma: f64) -> Result<f64> {
        let lambda = self.pump_wavelength_um;
        let no = self.principal_index(lambda, Polarization::Ordinary)?;
        let ne = self.principal_index(lambda, Polarization::Extraordinary)?;
        let n = self.extraordinary_index(lambda, gamma)?;
        Ok(0.5 * n * n * (2.0 * gamma).sin() * (1.0 / (ne * ne) - 1.0 / (no * no)))
    }

    /// Walk-off normalised to the carrier wavenumber instead of the local one:
    /// −(1/k_p)(dk/dγ) with k_p taken at the cut angle.
    pub fn walk_off_carrier_normalized(&self, gamma: f64) -> Result<f64> {
        let k = self.pump_wavenumber(0.0, gamma)?;
        Ok(self.walk_off(gamma)? * k / self.carrier_pump_wavenumber()?)
    }

    /// Signal group delay k′_s = dk_s/dΩ at degeneracy (fs/μm).
    pub fn signal_group_delay(&self) -> Result<f64> {
        let h = 1e-3 * self.signal_frequency();
        Ok((self.signal_wavenumber(h)? - self.signal_wavenumber(-h)?) / (2.0 * h))
    }

    /// Signal group-velocity dispersion k″_s = d²k_s/dΩ² at degeneracy (fs²/μm).
    pub fn signal_gvd(&self) -> Result<f64> {
        let h = 1e-3 * self.signal_frequency();
        Ok((self.signal_wavenumber(h)? - 2.0 * self.signal_wavenumber(0.0)?
            + self.signal_wavenumber(-h)?)
            / (h * h))
    }

    /// Ω_B = √(k_p / k″_s), the scale of the quadratic growth of Δcoll(Ω)/k_p.
    pub fn dispersion_bandwidth(&self) -> Result<f64> {
        Ok((self.carrier_pump_wavenumber()? / self.signal_gvd()?).sqrt())
    }
}

/// Angle γ between a pump tilted by θ_p (in the direction rotated by β in the
/// input facet) and the optical axis of a crystal cut at γ₀:
/// cos γ = cos θ_p cos γ₀ + sin θ_p sin γ₀ sin β.
pub fn pump_gamma(tilt: f64, beta: f64, gamma0: f64) -> f64 {
    let c = tilt.cos() * gamma0.cos() + tilt.sin() * gamma0.sin() * beta.sin();
    c.clamp(-1.0, 1.0).acos()
}

/// Rate of change of the pump wavenumbers with their transverse tilt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TiltWavenumberRatio {
    /// (k_p2 − k_p1)/(Q₂ − Q₁) from the two exact pump wavenumbers.
    pub exact: f64,
    /// ρ̃(sin β cos θ̄ sin γ₀/sin γ̄ − sin θ̄ cos γ₀/sin γ̄) at θ̄ = (θ_p1 + θ_p2)/2,
    /// with ρ̃ the carrier-normalised walk-off at γ̄.
    pub first_order: f64,
    /// ρ₀(sin β − θ̄ / tan γ₀), the small-β form evaluated with the cut-angle walk-off.
    pub small_beta: f64,
    /// Local walk-off at γ̄.
    pub rho_bar: f64,
    /// Local walk-off at the cut angle.
    pub rho0: f64,
    pub gamma_bar: f64,
}

/// Δk_p/ΔQ_p for the two pumps. Transverse pump wave-vectors are Q_j = k_p θ_pj.
pub fn dkp_dqp(model: &CrystalModel, pump: &PumpConfig) -> Result<TiltWavenumberRatio> {
    let (t1, t2) = (pump.tilt1, pump.tilt2);
    if t1 == t2 {
        return Err(Error::InvalidParameter(
            "Δk_p/ΔQ_p undefined for coincident pump tilts".into(),
        ));
    }
    let mean_tilt = 0.5 * (t1 + t2);
    let gamma0 = model.cut_angle;
    let gamma_bar = pump_gamma(mean_tilt, pump.beta, gamma0);
    if model.is_noncritical() {
        return Ok(TiltWavenumberRatio {
            exact: 0.0,
            first_order: 0.0,
            small_beta: 0.0,
            rho_bar: 0.0,
            rho0: 0.0,
            gamma_bar,
        });
    }
    let kp = model.carrier_pump_wavenumber()?;
    let k1 = model.tilted_pump_wavenumber(t1, pump.beta)?;
    let k2 = model.tilted_pump_wavenumber(t2, pump.beta)?;
    let exact = (k2 - k1) / (kp * (t2 - t1));

    let rho_tilde = model.walk_off_carrier_normalized(gamma_bar)?;
    let sg = gamma_bar.sin();
    let first_order = rho_tilde
        * (pump.beta.sin() * mean_tilt.cos() * gamma0.sin() / sg
            - mean_tilt.sin() * gamma0.cos() / sg);
    let rho0 = model.walk_off(gamma0)?;
    let small_beta = rho0 * (pump.beta.sin() - mean_tilt / gamma0.tan());
    Ok(TiltWavenumberRatio {
        exact,
        first_order,
        small_beta,
        rho_bar: model.walk_off(gamma_bar)?,
        rho0,
        gamma_bar,
    })
}
