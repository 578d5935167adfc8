//! Shared and coupled modes, resonance conditions and the Poynting-vector
//! picture of the resonance.

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dispersion::{dkp_dqp, pump_gamma, CrystalModel};
use crate::numeric::brent;
use crate::phase_geometry::{
    collinear_mismatch, mismatch, surface_radius, MismatchMethod, ModeCoord, PumpModeCoord,
};
use crate::{Error, Result};

/// Upper bound on pump tilts (paraxial regime).
pub const MAX_TILT: f64 = 0.2;

/// The two classical pump waves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PumpConfig {
    pub tilt1: f64,
    pub tilt2: f64,
    /// Rotation of the tilt plane in the input facet.
    pub beta: f64,
    pub alpha1: Complex64,
    pub alpha2: Complex64,
    /// Coupling per unit amplitude, μm⁻¹.
    pub chi1: f64,
    pub chi2: f64,
}

impl PumpConfig {
    pub fn new(
        tilt1: f64,
        tilt2: f64,
        beta: f64,
        alpha1: Complex64,
        alpha2: Complex64,
        chi1: f64,
        chi2: f64,
    ) -> Result<Self> {
        let p = PumpConfig {
            tilt1,
            tilt2,
            beta,
            alpha1,
            alpha2,
            chi1,
            chi2,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for t in [self.tilt1, self.tilt2] {
            if !(t.abs() < MAX_TILT) {
                return Err(Error::InvalidParameter(format!(
                    "pump tilt {t} rad outside the paraxial range |θ| < {MAX_TILT}"
                )));
            }
        }
        if !self.beta.is_finite() || self.chi1 < 0.0 || self.chi2 < 0.0 {
            return Err(Error::InvalidParameter("β must be finite and χ non-negative".into()));
        }
        if !(self.g_bar() > 0.0) {
            return Err(Error::InvalidParameter("ḡ must be positive".into()));
        }
        Ok(())
    }

    pub fn g1(&self) -> f64 {
        self.chi1 * self.alpha1.norm()
    }

    pub fn g2(&self) -> f64 {
        self.chi2 * self.alpha2.norm()
    }

    /// Complex couplings g_j e^{iϕ_j}.
    pub fn g1_complex(&self) -> Complex64 {
        self.alpha1 * self.chi1
    }

    pub fn g2_complex(&self) -> Complex64 {
        self.alpha2 * self.chi2
    }

    pub fn g_bar(&self) -> f64 {
        self.g1().hypot(self.g2())
    }

    pub fn phi1(&self) -> f64 {
        self.alpha1.arg()
    }

    pub fn phi2(&self) -> f64 {
        self.alpha2.arg()
    }

    /// ϕ₋ = (ϕ₁ − ϕ₂)/2.
    pub fn phi_minus(&self) -> f64 {
        0.5 * (self.phi1() - self.phi2())
    }

    /// ᾱ = e^{i(ϕ₁+ϕ₂)/2}·√(|α₁|² + |α₂|²).
    pub fn alpha_bar(&self) -> Complex64 {
        Complex64::from_polar(
            self.alpha1.norm().hypot(self.alpha2.norm()),
            0.5 * (self.phi1() + self.phi2()),
        )
    }

    pub fn with_beta(&self, beta: f64) -> Self {
        PumpConfig { beta, ..*self }
    }

    pub fn mean_tilt(&self) -> f64 {
        0.5 * (self.tilt1 + self.tilt2)
    }

    /// Transverse pump wave-vectors Q_j = k_p θ_pj along x.
    pub fn pump_modes(&self, model: &CrystalModel) -> Result<[PumpModeCoord; 2]> {
        let kp = model.carrier_pump_wavenumber()?;
        Ok([self.tilt1, self.tilt2].map(|t| PumpModeCoord {
            qx: kp * t,
            qy: 0.0,
            beta: self.beta,
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YBranch {
    Plus,
    Minus,
}

impl YBranch {
    pub fn sign(self) -> f64 {
        match self {
            YBranch::Plus => 1.0,
            YBranch::Minus => -1.0,
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            YBranch::Plus => YBranch::Minus,
            YBranch::Minus => YBranch::Plus,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterKind {
    Triplet,
    Quadruplet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClusterResiduals {
    /// D(w₀; Q₁), D(w₀; Q₂).
    pub shared_pump1: f64,
    pub shared_pump2: f64,
    /// D(w_b; Q₂): the non-generating process of the b mode.
    pub coupled_b_other: f64,
    /// D(w_c; Q₁).
    pub coupled_c_other: f64,
    /// Signed x resonance residuals q₀ₓ(Ω) + q₀ₓ(−Ω) − Q_j.
    pub resonance_pump1: f64,
    pub resonance_pump2: f64,
}

/// A solved group of coupled modes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModeCluster {
    pub kind: ClusterKind,
    pub shared: ModeCoord,
    /// The shared mode at −Ω that merges with a coupled mode (quadruplets only).
    pub shared_conjugate: Option<ModeCoord>,
    /// Partner via pump 1: Q₁ − w₀.
    pub coupled_b: ModeCoord,
    /// Partner via pump 2: Q₂ − w₀.
    pub coupled_c: ModeCoord,
    /// Pump (1 or 2) whose coupled mode coincides with a shared mode.
    pub resonant_pump: Option<usize>,
    pub residuals: ClusterResiduals,
    pub y_branch: YBranch,
}

fn check_distinct_tilts(pump: &PumpConfig) -> Result<()> {
    if pump.tilt1 == pump.tilt2 {
        return Err(Error::InvalidParameter("pump tilts must differ".into()));
    }
    Ok(())
}

/// Closed-form x coordinate of the shared modes,
/// q₀ₓ(Ω) = (Q₁+Q₂)/2·(1 − k_s(−Ω)/k_p) + (Δk_p/ΔQ_p)·k_s(−Ω).
pub fn shared_mode_qx(model: &CrystalModel, pump: &PumpConfig, omega: f64) -> Result<f64> {
    check_distinct_tilts(pump)?;
    let kp = model.carrier_pump_wavenumber()?;
    let ki = model.signal_wavenumber(-omega)?;
    let ratio = dkp_dqp(model, pump)?.exact;
    let q_sum = kp * (pump.tilt1 + pump.tilt2);
    Ok(0.5 * q_sum * (1.0 - ki / kp) + ratio * ki)
}

/// Paraxial shared mode at Ω on the requested y branch, or `None` when Σ₁ and
/// Σ₂ do not intersect at this frequency.
pub fn shared_mode(
    model: &CrystalModel,
    pump: &PumpConfig,
    omega: f64,
    y_branch: YBranch,
) -> Result<Option<ModeCoord>> {
    let qx = shared_mode_qx(model, pump, omega)?;
    let [p1, _] = pump.pump_modes(model)?;
    let circle = surface_radius(model, &p1, omega)?;
    let radicand = circle.f - (qx - circle.center_qx).powi(2);
    if radicand < 0.0 {
        return Ok(None);
    }
    Ok(Some(ModeCoord::new(
        qx,
        circle.center_qy + y_branch.sign() * radicand.sqrt(),
        omega,
    )))
}

/// F₁(Ω) − (q₀ₓ − c₁)²: the squared q_y of the shared mode. Negative when
/// the two circles do not cross.
pub fn shared_mode_radicand(model: &CrystalModel, pump: &PumpConfig, omega: f64) -> Result<f64> {
    let qx = shared_mode_qx(model, pump, omega)?;
    let [p1, _] = pump.pump_modes(model)?;
    let circle = surface_radius(model, &p1, omega)?;
    Ok(circle.f - (qx - circle.center_qx).powi(2))
}

/// Frequency in `[lo, hi]` at which the shared mode lies in the tilt plane
/// (q_y = 0), the only shared mode of a 2D+1 geometry.
pub fn in_plane_shared_frequency(model: &CrystalModel, pump: &PumpConfig, lo: f64, hi: f64) -> Result<f64> {
    let f = |omega: f64| shared_mode_radicand(model, pump, omega).unwrap_or(f64::NAN);
    brent(f, lo, hi, 1e-14)
}

/// Newton refinement of a shared mode against the exact mismatch,
/// D(w; Q₁) = D(w; Q₂) = 0 at fixed Ω.
pub fn refine_shared_mode(
    model: &CrystalModel,
    pump: &PumpConfig,
    guess: &ModeCoord,
    tol: f64,
) -> Result<ModeCoord> {
    let pumps = pump.pump_modes(model)?;
    let ks = model.signal_wavenumber(guess.omega)?;
    let ki = model.signal_wavenumber(-guess.omega)?;
    let mut w = *guess;
    for _ in 0..50 {
        let mut d = [0.0; 2];
        let mut jac = [[0.0; 2]; 2];
        for (j, p) in pumps.iter().enumerate() {
            d[j] = mismatch(model, p, &w, MismatchMethod::Exact)?.value;
            let ksz = (ks * ks - w.q_squared()).sqrt();
            let idler = w.conjugate(p);
            let kiz = (ki * ki - idler.q_squared()).sqrt();
            jac[j][0] = -w.qx / ksz + idler.qx / kiz;
            jac[j][1] = -w.qy / ksz + idler.qy / kiz;
        }
        if d[0].abs().max(d[1].abs()) < tol {
            return Ok(w);
        }
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        if det.abs() < 1e-300 {
            break;
        }
        w.qx -= (jac[1][1] * d[0] - jac[0][1] * d[1]) / det;
        w.qy -= (-jac[1][0] * d[0] + jac[0][0] * d[1]) / det;
    }
    Err(Error::RootNotFound(format!(
        "shared-mode Newton refinement did not converge near {guess:?}"
    )))
}

/// Partners of a shared mode: w_b = Q₁ − w₀ and w_c = Q₂ − w₀ (both at −Ω).
pub fn coupled_modes(
    model: &CrystalModel,
    pump: &PumpConfig,
    shared: &ModeCoord,
) -> Result<(ModeCoord, ModeCoord)> {
    let [p1, p2] = pump.pump_modes(model)?;
    Ok((shared.conjugate(&p1), shared.conjugate(&p2)))
}

/// Signed x resonance residuals q₀ₓ(Ω) + q₀ₓ(−Ω) − Q_j for both pumps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResonanceResidual {
    pub pump1: f64,
    pub pump2: f64,
}

impl ResonanceResidual {
    /// Smaller of the two magnitudes with the pump it refers to. Ties are
    /// reported as pump 1; both values are always kept in the struct.
    pub fn nearest(&self) -> (usize, f64) {
        if self.pump1.abs() <= self.pump2.abs() {
            (1, self.pump1.abs())
        } else {
            (2, self.pump2.abs())
        }
    }
}

pub fn resonance_residual(model: &CrystalModel, pump: &PumpConfig, omega: f64) -> Result<ResonanceResidual> {
    let sum = shared_mode_qx(model, pump, omega)? + shared_mode_qx(model, pump, -omega)?;
    let kp = model.carrier_pump_wavenumber()?;
    Ok(ResonanceResidual {
        pump1: sum - kp * pump.tilt1,
        pump2: sum - kp * pump.tilt2,
    })
}

/// One resonance root: which pump's coupled branch merges with the shared modes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResonanceRoot {
    /// 1: shared → b via pump 1; 2: shared → c via pump 2.
    pub pump: usize,
    /// sin β = ±(θ₁ − θ₂)/(2ρ₀) + (θ₁ + θ₂)/(2 tan γ₀).
    pub beta_formula: f64,
    /// Root of the exact resonance residual at Ω = 0, bracketed around the formula.
    pub beta_refined: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResonanceReport {
    /// Root with the + sign in front of (θ₁ − θ₂)/(2ρ₀).
    pub plus: ResonanceRoot,
    /// Root with the − sign.
    pub minus: ResonanceRoot,
    pub rho0: f64,
}

pub fn resonance_beta(model: &CrystalModel, tilt1: f64, tilt2: f64) -> Result<ResonanceReport> {
    if model.is_noncritical() {
        return Err(Error::NoResonance {
            tilt_difference: (tilt1 - tilt2).abs(),
            limit: 0.0,
        });
    }
    let gamma0 = model.cut_angle;
    let rho0 = model.walk_off(gamma0)?;
    let limit = 2.0 * rho0.abs();
    if !((tilt1 - tilt2).abs() < limit) {
        return Err(Error::NoResonance {
            tilt_difference: (tilt1 - tilt2).abs(),
            limit,
        });
    }
    let base = (tilt1 + tilt2) / (2.0 * gamma0.tan());
    let half = (tilt1 - tilt2) / (2.0 * rho0);
    let probe = PumpConfig::new(
        tilt1,
        tilt2,
        0.0,
        Complex64::new(1.0, 0.0),
        Complex64::new(1.0, 0.0),
        1.0,
        1.0,
    )?;
    let root = |sign: f64| -> Result<ResonanceRoot> {
        let s = sign * half + base;
        if s.abs() >= 1.0 {
            return Err(Error::NoResonance {
                tilt_difference: (tilt1 - tilt2).abs(),
                limit,
            });
        }
        let beta_formula = s.asin();
        // Δk_p/ΔQ_p grows with sin β, so the merging pump is fixed by the sign
        // of the required ratio ±(θ₁ − θ₂)/2: + → pump 1, − → pump 2.
        let pump_id = if sign > 0.0 { 1 } else { 2 };
        let residual = |b: f64| {
            resonance_residual(model, &probe.with_beta(b), 0.0)
                .map(|r| if pump_id == 1 { r.pump1 } else { r.pump2 })
                .unwrap_or(f64::NAN)
        };
        let width = 2f64.to_radians();
        let lo = (beta_formula - width).max(-FRAC_PI_2);
        let hi = (beta_formula + width).min(FRAC_PI_2);
        let beta_refined = brent(residual, lo, hi, 1e-13).ok();
        Ok(ResonanceRoot {
            pump: pump_id,
            beta_formula,
            beta_refined,
        })
    };
    Ok(ResonanceReport {
        plus: root(1.0)?,
        minus: root(-1.0)?,
        rho0,
    })
}

/// Angular positions (θₓ = qₓ/k_s) of shared and coupled modes at frequency Ω.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AngularPositions {
    /// q₀ₓ(Ω)/k_s(Ω), including the (G_z − Δcoll)/k_s correction.
    pub shared_x: f64,
    /// θ̄ + (Δk_p/ΔQ_p)·k_s(−Ω)/k_s(Ω): the correction term dropped.
    pub shared_x_uncorrected: f64,
    /// (Q₁ − q₀ₓ(−Ω))/k_s(Ω).
    pub coupled_b_x: f64,
    pub coupled_c_x: f64,
    /// θ̄ ± (θ₁ − θ₂)/2·k_p/k_s(Ω) − Δk_p/ΔQ_p.
    pub coupled_b_x_approx: f64,
    pub coupled_c_x_approx: f64,
}

pub fn angular_positions(model: &CrystalModel, pump: &PumpConfig, omega: f64) -> Result<AngularPositions> {
    let kp = model.carrier_pump_wavenumber()?;
    let ks = model.signal_wavenumber(omega)?;
    let ki = model.signal_wavenumber(-omega)?;
    let ratio = dkp_dqp(model, pump)?.exact;
    let mean = pump.mean_tilt();
    let q_plus = shared_mode_qx(model, pump, omega)?;
    let q_minus = shared_mode_qx(model, pump, -omega)?;
    let half_diff = 0.5 * (pump.tilt1 - pump.tilt2) * kp / ks;
    Ok(AngularPositions {
        shared_x: q_plus / ks,
        shared_x_uncorrected: mean + ratio * ki / ks,
        coupled_b_x: (kp * pump.tilt1 - q_minus) / ks,
        coupled_c_x: (kp * pump.tilt2 - q_minus) / ks,
        coupled_b_x_approx: mean + half_diff - ratio,
        coupled_c_x_approx: mean - half_diff - ratio,
    })
}

/// Solves the cluster at Ω on one y branch. The shared mode is refined against
/// the exact mismatch. The cluster is a quadruplet when the shared mode at −Ω
/// on the opposite y branch coincides with w_b or w_c within `merge_tol` (μm⁻¹).
pub fn solve_cluster(
    model: &CrystalModel,
    pump: &PumpConfig,
    omega: f64,
    y_branch: YBranch,
    merge_tol: f64,
) -> Result<Option<ModeCluster>> {
    let Some(guess) = shared_mode(model, pump, omega, y_branch)? else {
        return Ok(None);
    };
    let shared = refine_shared_mode(model, pump, &guess, 1e-12)?;
    let (b, c) = coupled_modes(model, pump, &shared)?;
    let [p1, p2] = pump.pump_modes(model)?;
    let exact = |p: &PumpModeCoord, w: &ModeCoord| mismatch(model, p, w, MismatchMethod::Exact).map(|m| m.value);
    let resonance = resonance_residual(model, pump, omega)?;
    let residuals = ClusterResiduals {
        shared_pump1: exact(&p1, &shared)?,
        shared_pump2: exact(&p2, &shared)?,
        coupled_b_other: exact(&p2, &b)?,
        coupled_c_other: exact(&p1, &c)?,
        resonance_pump1: resonance.pump1,
        resonance_pump2: resonance.pump2,
    };

    let partner = shared_mode(model, pump, -omega, y_branch.opposite())?
        .map(|g| refine_shared_mode(model, pump, &g, 1e-12))
        .transpose()?;
    let distance = |a: &ModeCoord, o: &ModeCoord| (a.qx - o.qx).hypot(a.qy - o.qy);
    let mut resonant_pump = None;
    if let Some(p) = &partner {
        let db = distance(p, &b);
        let dc = distance(p, &c);
        if db.min(dc) < merge_tol {
            resonant_pump = Some(if db <= dc { 1 } else { 2 });
        }
    }
    Ok(Some(ModeCluster {
        kind: if resonant_pump.is_some() {
            ClusterKind::Quadruplet
        } else {
            ClusterKind::Triplet
        },
        shared,
        shared_conjugate: resonant_pump.and(partner),
        coupled_b: b,
        coupled_c: c,
        resonant_pump,
        residuals,
        y_branch,
    }))
}

/// Mismatch tolerance 2π/(10 L) for classifying a mode as phase matched in a
/// crystal of length L (μm).
pub fn shared_tolerance(crystal_length_um: f64) -> f64 {
    2.0 * std::f64::consts::PI / (10.0 * crystal_length_um)
}

/// Direction of the carrier's Poynting vector projected on the tilt plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PoyntingAngle {
    /// θ̄ − ρ_γ̄ sin β.
    pub paraxial: f64,
    /// From the Poynting vector rotated by ρ_γ̄ away from the optical axis in
    /// the plane of the carrier wave-vector and the axis.
    pub exact: f64,
    pub rho_bar: f64,
}

pub fn poynting_angle(model: &CrystalModel, pump: &PumpConfig) -> Result<PoyntingAngle> {
    let mean = pump.mean_tilt();
    if model.is_noncritical() {
        return Ok(PoyntingAngle {
            paraxial: mean,
            exact: mean,
            rho_bar: 0.0,
        });
    }
    let gamma0 = model.cut_angle;
    let gamma = pump_gamma(mean, pump.beta, gamma0);
    let rho = model.walk_off(gamma)?;
    // facet frame (x', y', z), optical axis in the y'-z plane
    let (sb, cb) = pump.beta.sin_cos();
    let k = [mean.sin() * cb, mean.sin() * sb, mean.cos()];
    let axis = [0.0, gamma0.sin(), gamma0.cos()];
    let cos_g = k.iter().zip(&axis).map(|(a, b)| a * b).sum::<f64>();
    let sin_g = (1.0 - cos_g * cos_g).sqrt();
    let s: [f64; 3] = if sin_g < 1e-15 {
        k
    } else {
        std::array::from_fn(|i| rho.cos() * k[i] + rho.sin() * (k[i] * cos_g - axis[i]) / sin_g)
    };
    let transverse = s[0] * cb + s[1] * sb;
    Ok(PoyntingAngle {
        paraxial: mean - rho * pump.beta.sin(),
        exact: transverse.atan2(s[2]),
        rho_bar: rho,
    })
}

/// Collinear mismatch relative to k_p; the Ω-dependence scale of the resonance condition.
pub fn resonance_frequency_scale(model: &CrystalModel, omega: f64) -> Result<f64> {
    Ok(collinear_mismatch(model, omega)? / model.carrier_pump_wavenumber()?)
}
