//! Phase mismatch D(w_s; w_p) and the phase-matching surfaces Σ₁, Σ₂.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dispersion::{pump_gamma, CrystalModel};
use crate::units::wavelength;
use crate::{Error, Result};

/// Relative margin of the evanescent guard: a mode is propagating when
/// |q| < k·(1 − EVANESCENT_MARGIN).
pub const EVANESCENT_MARGIN: f64 = 1e-6;

/// Spatio-temporal Fourier mode of the signal field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeCoord {
    pub qx: f64,
    pub qy: f64,
    /// Frequency offset Ω from the degenerate carrier ω_s.
    pub omega: f64,
}

impl ModeCoord {
    pub fn new(qx: f64, qy: f64, omega: f64) -> Self {
        ModeCoord { qx, qy, omega }
    }

    pub fn q_squared(&self) -> f64 {
        self.qx * self.qx + self.qy * self.qy
    }

    /// Partner mode Q − w generated by a pump of transverse wave-vector Q.
    pub fn conjugate(&self, pump: &PumpModeCoord) -> ModeCoord {
        ModeCoord {
            qx: pump.qx - self.qx,
            qy: pump.qy - self.qy,
            omega: -self.omega,
        }
    }
}

/// Monochromatic pump wave with transverse wave-vector (Q_x, Q_y).
///
/// `beta` is the rotation of the tilt plane (the x axis of the mode
/// coordinates) in the input facet; it fixes the pump's angle to the optical
/// axis and therefore its wavenumber in a birefringent crystal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PumpModeCoord {
    pub qx: f64,
    pub qy: f64,
    pub beta: f64,
}

impl PumpModeCoord {
    pub fn q_squared(&self) -> f64 {
        self.qx * self.qx + self.qy * self.qy
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MismatchMethod {
    Exact,
    Paraxial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MismatchValue {
    pub value: f64,
    pub method: MismatchMethod,
}

/// Wavenumber k_pj of a pump wave. The tilt is θ = |Q|/k_p with k_p the
/// carrier wavenumber at the cut angle.
pub fn pump_wavenumber(model: &CrystalModel, pump: &PumpModeCoord) -> Result<f64> {
    if model.is_noncritical() {
        return model.carrier_pump_wavenumber();
    }
    let kp = model.carrier_pump_wavenumber()?;
    let q = pump.q_squared().sqrt();
    if q == 0.0 {
        return Ok(kp);
    }
    let azimuth = pump.qy.atan2(pump.qx);
    let gamma = pump_gamma(q / kp, pump.beta + azimuth, model.cut_angle);
    model.pump_wavenumber(0.0, gamma)
}

fn longitudinal(k: f64, q2: f64) -> Result<f64> {
    let limit = k * (1.0 - EVANESCENT_MARGIN);
    if q2 >= limit * limit {
        return Err(Error::Evanescent { q: q2.sqrt(), k });
    }
    Ok((k * k - q2).sqrt())
}

/// D(w_s; w_p) = k_sz(w_s) + k_sz(w_p − w_s) − k_pz(w_p) + G_z.
pub fn mismatch(
    model: &CrystalModel,
    pump: &PumpModeCoord,
    signal: &ModeCoord,
    method: MismatchMethod,
) -> Result<MismatchValue> {
    let ks = model.signal_wavenumber(signal.omega)?;
    let ki = model.signal_wavenumber(-signal.omega)?;
    let idler = signal.conjugate(pump);
    let kpj = pump_wavenumber(model, pump)?;
    let qs2 = signal.q_squared();
    let qi2 = idler.q_squared();
    let qp2 = pump.q_squared();
    // the guard applies to both methods so the paraxial form is never used on
    // modes that do not propagate
    let ksz = longitudinal(ks, qs2)?;
    let kiz = longitudinal(ki, qi2)?;
    let kpz = longitudinal(kpj, qp2)?;
    let value = match method {
        MismatchMethod::Exact => ksz + kiz - kpz + model.grating_wavenumber(),
        MismatchMethod::Paraxial => {
            let kp = model.carrier_pump_wavenumber()?;
            ks - qs2 / (2.0 * ks) + ki - qi2 / (2.0 * ki) - kpj + qp2 / (2.0 * kp)
                + model.grating_wavenumber()
        }
    };
    Ok(MismatchValue { value, method })
}

/// Δcoll(Ω) = k_s(Ω) + k_s(−Ω) − k_p + G_z.
pub fn collinear_mismatch(model: &CrystalModel, omega: f64) -> Result<f64> {
    Ok(model.signal_wavenumber(omega)? + model.signal_wavenumber(-omega)?
        - model.carrier_pump_wavenumber()?
        + model.grating_wavenumber())
}

/// Squared radius and centre of the paraxial phase-matching circle of one pump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurfaceRadius {
    /// F_j(Ω), μm⁻². Negative values mean no real circle at this Ω.
    pub f: f64,
    pub center_qx: f64,
    pub center_qy: f64,
}

impl SurfaceRadius {
    pub fn radius(&self) -> Option<f64> {
        (self.f >= 0.0).then(|| self.f.sqrt())
    }
}

/// Paraxial phase-matching circle |q − Q k_s(Ω)/(k_s(Ω)+k_s(−Ω))|² = F_j(Ω) with
/// F_j = k̄[Δcoll − (k_pj − k_p) + Q²/(2k_p)·(Δcoll − G_z)/(k_p + Δcoll − G_z)]
/// and k̄ = 2k_s(Ω)k_s(−Ω)/(k_s(Ω)+k_s(−Ω)).
pub fn surface_radius(model: &CrystalModel, pump: &PumpModeCoord, omega: f64) -> Result<SurfaceRadius> {
    let ks = model.signal_wavenumber(omega)?;
    let ki = model.signal_wavenumber(-omega)?;
    let kp = model.carrier_pump_wavenumber()?;
    let kpj = pump_wavenumber(model, pump)?;
    let g = model.grating_wavenumber();
    let dcoll = ks + ki - kp + g;
    let kbar = 2.0 * ks * ki / (ks + ki);
    let q2 = pump.q_squared();
    let f = kbar * (dcoll - (kpj - kp) + q2 / (2.0 * kp) * (dcoll - g) / (kp + dcoll - g));
    let w = ks / (ks + ki);
    Ok(SurfaceRadius {
        f,
        center_qx: pump.qx * w,
        center_qy: pump.qy * w,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceShape {
    OpenTube,
    Hourglass,
    TwoBranches,
}

/// Shape of Σ_j from the sign of F_j(0); |F_j(0)| ≤ `tol` counts as the hourglass.
pub fn classify_surface(model: &CrystalModel, pump: &PumpModeCoord, tol: f64) -> Result<SurfaceShape> {
    let f0 = surface_radius(model, pump, 0.0)?.f;
    Ok(if f0.abs() <= tol {
        SurfaceShape::Hourglass
    } else if f0 > 0.0 {
        SurfaceShape::OpenTube
    } else {
        SurfaceShape::TwoBranches
    })
}

/// One sample of a phase-matching surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurfacePoint {
    pub lambda_um: f64,
    pub omega_offset: f64,
    pub theta_x_rad: f64,
    pub theta_y_rad: f64,
    pub qx: f64,
    pub qy: f64,
    /// Index of the contiguous Ω interval (in grid order) with F_j ≥ 0.
    pub branch_id: usize,
    pub pump_id: usize,
}

impl SurfacePoint {
    pub fn mode(&self) -> ModeCoord {
        ModeCoord::new(self.qx, self.qy, self.omega_offset)
    }
}

/// Ω grid symmetric about 0 with `n_half` positive values up to `max`;
/// contains 0 and every ±Ω pair exactly.
pub fn symmetric_omega_grid(max: f64, n_half: usize) -> Vec<f64> {
    let step = if n_half == 0 { 0.0 } else { max / n_half as f64 };
    let positive: Vec<f64> = (1..=n_half).map(|i| i as f64 * step).collect();
    positive
        .iter()
        .rev()
        .map(|w| -w)
        .chain(std::iter::once(0.0))
        .chain(positive.iter().copied())
        .collect()
}

/// Point cloud of Σ_j: `n_azimuth` points on the circle at every Ω with F_j ≥ 0.
pub fn sample_surface(
    model: &CrystalModel,
    pump: &PumpModeCoord,
    pump_id: usize,
    omega_grid: &[f64],
    n_azimuth: usize,
) -> Result<Vec<SurfacePoint>> {
    if omega_grid.is_empty() || n_azimuth == 0 {
        return Err(Error::InvalidParameter("empty Ω grid or azimuth count".into()));
    }
    let rings: Vec<Option<(SurfaceRadius, f64)>> = omega_grid
        .par_iter()
        .map(|&omega| -> Result<_> {
            let r = surface_radius(model, pump, omega)?;
            Ok((r.f >= 0.0).then_some((r, model.signal_wavenumber(omega)?)))
        })
        .collect::<Result<_>>()?;

    let mut out = Vec::new();
    let mut branch = 0usize;
    let mut previous_open = false;
    for (&omega, ring) in omega_grid.iter().zip(&rings) {
        let Some((r, ks)) = ring else {
            if previous_open {
                branch += 1;
            }
            previous_open = false;
            continue;
        };
        previous_open = true;
        let radius = r.f.sqrt();
        let lambda = wavelength(model.signal_frequency() + omega);
        for i in 0..n_azimuth {
            let phi = 2.0 * std::f64::consts::PI * i as f64 / n_azimuth as f64;
            let qx = r.center_qx + radius * phi.cos();
            let qy = r.center_qy + radius * phi.sin();
            out.push(SurfacePoint {
                lambda_um: lambda,
                omega_offset: omega,
                theta_x_rad: qx / ks,
                theta_y_rad: qy / ks,
                qx,
                qy,
                branch_id: branch,
                pump_id,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tilted(model: &CrystalModel, tilt_deg: f64, beta: f64) -> PumpModeCoord {
        let kp = model.carrier_pump_wavenumber().unwrap();
        PumpModeCoord {
            qx: kp * tilt_deg.to_radians(),
            qy: 0.0,
            beta,
        }
    }

    #[test]
    fn design_point_is_phase_matched() {
        for model in [
            CrystalModel::bbo_reference().with_collinear_design().unwrap(),
            CrystalModel::pplt_reference().with_collinear_design().unwrap(),
        ] {
            let pump = PumpModeCoord { qx: 0.0, qy: 0.0, beta: 0.0 };
            let origin = ModeCoord::new(0.0, 0.0, 0.0);
            for method in [MismatchMethod::Exact, MismatchMethod::Paraxial] {
                let d = mismatch(&model, &pump, &origin, method).unwrap().value;
                assert!(d.abs() < 1e-4, "{d}");
            }
            assert!(collinear_mismatch(&model, 0.0).unwrap().abs() < 1e-4);
        }
    }

    #[test]
    fn paraxial_close_to_exact_for_small_q() {
        let model = CrystalModel::bbo_reference();
        let pump = PumpModeCoord { qx: 0.0, qy: 0.0, beta: 0.0 };
        for i in -10..=10 {
            for j in -10..=10 {
                let w = ModeCoord::new(0.05 * i as f64, 0.05 * j as f64, 0.0);
                if w.q_squared() >= 0.25 {
                    continue;
                }
                let e = mismatch(&model, &pump, &w, MismatchMethod::Exact).unwrap().value;
                let p = mismatch(&model, &pump, &w, MismatchMethod::Paraxial).unwrap().value;
                assert!((e - p).abs() < 1e-5, "{w:?}: {e} {p}");
            }
        }
    }

    #[test]
    fn evanescent_mode_rejected() {
        let model = CrystalModel::pplt_reference();
        let pump = PumpModeCoord { qx: 0.0, qy: 0.0, beta: 0.0 };
        let ks = model.signal_wavenumber(0.0).unwrap();
        let w = ModeCoord::new(ks, 0.0, 0.0);
        for method in [MismatchMethod::Exact, MismatchMethod::Paraxial] {
            assert!(matches!(
                mismatch(&model, &pump, &w, method),
                Err(Error::Evanescent { .. })
            ));
        }
    }

    #[test]
    fn collinear_mismatch_small_over_bbo_window() {
        let model = CrystalModel::bbo_reference();
        let kp = model.carrier_pump_wavenumber().unwrap();
        let ws = model.signal_frequency();
        // signal wavelengths 0.43..2.1 μm; the conjugate stays inside that band
        let lo = crate::units::angular_frequency(2.1) - ws;
        let hi = crate::units::angular_frequency(0.43) - ws;
        let omega_max = lo.abs().min(hi);
        for i in 0..=200 {
            let omega = omega_max * i as f64 / 200.0;
            let d = collinear_mismatch(&model, omega).unwrap();
            assert!((d / kp).abs() < 1e-2, "Ω={omega}: {}", d / kp);
        }
    }

    #[test]
    fn collinear_mismatch_scales_with_dispersion_bandwidth() {
        let model = CrystalModel::bbo_reference().with_collinear_design().unwrap();
        let kp = model.carrier_pump_wavenumber().unwrap();
        let omega_b = model.dispersion_bandwidth().unwrap();
        let omega = 0.05;
        let ratio = collinear_mismatch(&model, omega).unwrap() / kp / (omega / omega_b).powi(2);
        assert!((ratio - 1.0).abs() < 0.02, "{ratio}");
    }

    #[test]
    fn circle_points_are_phase_matched() {
        for (model, tilt, beta) in [
            (CrystalModel::pplt_reference(), -1.2, 0.0),
            (CrystalModel::pplt_reference(), 1.2, 0.0),
            (CrystalModel::bbo_reference(), 1.2, -0.125),
            (CrystalModel::bbo_reference(), 0.0, 0.3),
        ] {
            let pump = tilted(&model, tilt, beta);
            let grid = symmetric_omega_grid(0.5, 10);
            let pts = sample_surface(&model, &pump, 1, &grid, 24).unwrap();
            assert!(!pts.is_empty());
            for p in pts {
                let d = mismatch(&model, &pump, &p.mode(), MismatchMethod::Paraxial)
                    .unwrap()
                    .value;
                assert!(d.abs() < 1e-9, "{d}");
            }
        }
    }

    #[test]
    fn circle_center_follows_pump() {
        let model = CrystalModel::bbo_reference();
        let pump = tilted(&model, 1.2, 0.0);
        for omega in [-0.4, 0.0, 0.3] {
            let r = surface_radius(&model, &pump, omega).unwrap();
            let theta = r.center_qx / model.signal_wavenumber(omega).unwrap();
            assert!((theta - 1.2f64.to_radians()).abs() < 0.05 * 1.2f64.to_radians());
        }
    }

    #[test]
    fn surface_shapes() {
        let pplt = CrystalModel::pplt_reference();
        let pump = tilted(&pplt, 1.2, 0.0);
        assert_eq!(classify_surface(&pplt, &pump, 1e-9).unwrap(), SurfaceShape::OpenTube);

        let mut long_period = pplt.clone();
        long_period.poling_period = Some(8.2);
        assert_eq!(
            classify_surface(&long_period, &pump, 1e-9).unwrap(),
            SurfaceShape::TwoBranches
        );

        // tune the period until F(0) vanishes
        let f0 = |p: f64| {
            let mut m = pplt.clone();
            m.poling_period = Some(p);
            surface_radius(&m, &pump, 0.0).unwrap().f
        };
        let p = crate::numeric::brent(f0, 7.5, 8.2, 1e-14).unwrap();
        let mut m = pplt.clone();
        m.poling_period = Some(p);
        assert_eq!(classify_surface(&m, &pump, 1e-9).unwrap(), SurfaceShape::Hourglass);
    }

    #[test]
    fn pplt_tubes_nearly_identical() {
        let model = CrystalModel::pplt_reference();
        let r1 = surface_radius(&model, &tilted(&model, -1.2, 0.0), 0.1).unwrap();
        let r2 = surface_radius(&model, &tilted(&model, 1.2, 0.0), 0.1).unwrap();
        assert!(r1.f > 0.0);
        assert_eq!(r1.f, r2.f);
        assert_eq!(r1.center_qx, -r2.center_qx);
    }

    #[test]
    fn bbo_second_surface_changes_with_beta() {
        // untilted pump unaffected by β; tilted pump: two branches at negative β
        // (non-collinear at degeneracy is impossible), open tube at positive β
        let model = CrystalModel::bbo_reference().with_collinear_design().unwrap();
        let f_neg = surface_radius(&model, &tilted(&model, 1.2, -0.125), 0.0).unwrap().f;
        let f_pos = surface_radius(&model, &tilted(&model, 1.2, 0.157), 0.0).unwrap().f;
        assert!(f_neg > 0.0, "{f_neg}");
        assert!(f_pos < 0.0, "{f_pos}");
        let f1a = surface_radius(&model, &tilted(&model, 0.0, -0.125), 0.2).unwrap().f;
        let f1b = surface_radius(&model, &tilted(&model, 0.0, 0.157), 0.2).unwrap().f;
        assert_eq!(f1a, f1b);
    }

    #[test]
    fn two_branch_surface_is_empty_near_degeneracy() {
        let mut model = CrystalModel::pplt_reference();
        model.poling_period = Some(8.2);
        let pump = tilted(&model, 1.2, 0.0);
        let grid = symmetric_omega_grid(0.6, 30);
        let pts = sample_surface(&model, &pump, 2, &grid, 8).unwrap();
        assert!(pts.iter().all(|p| p.omega_offset.abs() > 0.0));
        let expected: usize = grid
            .iter()
            .filter(|&&w| surface_radius(&model, &pump, w).unwrap().f >= 0.0)
            .count()
            * 8;
        assert_eq!(pts.len(), expected);
        // the two branches are labelled separately
        let ids: std::collections::BTreeSet<_> = pts.iter().map(|p| p.branch_id).collect();
        assert_eq!(ids.len(), 2);
    }

    #[test]
    fn symmetric_grid_contains_pairs() {
        let g = symmetric_omega_grid(0.3, 7);
        assert_eq!(g.len(), 15);
        for w in &g {
            assert!(g.contains(&-w));
        }
    }

    proptest! {
        #[test]
        fn signal_idler_exchange_symmetry(
            qx in -0.8f64..0.8, qy in -0.8f64..0.8, omega in -0.5f64..0.5,
            tilt in -0.03f64..0.03, beta in -1.5f64..1.5, exact in proptest::bool::ANY,
        ) {
            let method = if exact { MismatchMethod::Exact } else { MismatchMethod::Paraxial };
            for model in [CrystalModel::bbo_reference(), CrystalModel::pplt_reference()] {
                let kp = model.carrier_pump_wavenumber().unwrap();
                let pump = PumpModeCoord { qx: kp * tilt, qy: 0.3 * kp * tilt, beta };
                let w = ModeCoord::new(qx, qy, omega);
                let a = mismatch(&model, &pump, &w, method).unwrap().value;
                let b = mismatch(&model, &pump, &w.conjugate(&pump), method).unwrap().value;
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }

        #[test]
        fn collinear_mismatch_even(omega in -0.6f64..0.6) {
            for model in [CrystalModel::bbo_reference(), CrystalModel::pplt_reference()] {
                let a = collinear_mismatch(&model, omega).unwrap();
                let b = collinear_mismatch(&model, -omega).unwrap();
                prop_assert!((a - b).abs() < 1e-13);
            }
        }
    }
}
