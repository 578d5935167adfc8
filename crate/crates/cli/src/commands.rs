//! Command drivers. `plan` validates the config and converts it to core
//! inputs without touching the file system; `execute` computes and writes.

use std::time::Instant;

use serde::Serialize;

use dppdc_core::dispersion::CrystalModel;
use dppdc_core::field_sim::{
    hotspot_gain, predict_hotspots, run_simulation, write_checkpoint, GainReport, RunDiagnostics, SimConfig,
};
use dppdc_core::gaussian_witness::{witness_variances, GaussianState};
use dppdc_core::mode_dynamics::{quad_decompose, quadruplet_map, CouplingParams};
use dppdc_core::mode_solver::{
    resonance_beta, solve_cluster, ClusterKind, ClusterResiduals, ModeCluster, PumpConfig, ResonanceRoot, YBranch,
};
use dppdc_core::phase_geometry::{sample_surface, symmetric_omega_grid, ModeCoord, PumpModeCoord};
use dppdc_core::units::{angular_frequency, nm_to_um, wavelength};

use crate::config::{LoadedConfig, SHARED_SEARCH};
use crate::output::RunDir;
use crate::CliError;

/// Hot-spot fit settings used by `--gain-report`.
const BACKGROUND_FRACTION: f64 = 0.6;
const WINDOW_HALF_BINS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Surface,
    Modes { resonance: bool },
    Dynamics,
    Simulate { gain_report: bool },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Surface => "surface",
            Command::Modes { .. } => "modes",
            Command::Dynamics => "dynamics",
            Command::Simulate { .. } => "simulate",
        }
    }

    pub fn flags(&self) -> Vec<String> {
        match self {
            Command::Modes { resonance: true } => vec!["--resonance".into()],
            Command::Simulate { gain_report: true } => vec!["--gain-report".into()],
            _ => Vec::new(),
        }
    }
}

pub enum Job {
    Surface {
        model: CrystalModel,
        pumps: [PumpModeCoord; 2],
        omegas: Vec<f64>,
        n_azimuth: usize,
    },
    Modes {
        model: CrystalModel,
        pump: PumpConfig,
        omegas: Vec<f64>,
        branches: Vec<YBranch>,
        merge_tol: f64,
        resonance: bool,
    },
    Dynamics {
        rhos: Vec<f64>,
        params: CouplingParams,
        zs: Vec<f64>,
    },
    Simulate {
        config: Box<SimConfig>,
        gain_from: Option<f64>,
    },
}

pub fn plan(cmd: Command, cfg: &LoadedConfig) -> Result<Job, CliError> {
    let model = cfg.crystal()?;
    let pump = cfg.pump()?;
    Ok(match cmd {
        Command::Surface => {
            let s = cfg.solver()?;
            Job::Surface {
                pumps: pump.pump_modes(&model)?,
                omegas: symmetric_omega_grid(cfg.omega_max(&model)?, s.n_omega_half),
                n_azimuth: s.n_azimuth,
                model,
            }
        }
        Command::Modes { resonance } => {
            let s = cfg.solver()?;
            let mut omegas = Vec::new();
            for &l in &s.signal_nm {
                let omega = angular_frequency(nm_to_um(l)) - model.signal_frequency();
                if omega.abs() >= model.signal_frequency() {
                    return Err(cfg.error("solver", "signal_nm", format!("{l} nm is not a down-converted wavelength")));
                }
                omegas.push(omega);
                if s.include_conjugate && omega != 0.0 {
                    omegas.push(-omega);
                }
            }
            if pump.tilt1 == pump.tilt2 {
                return Err(cfg.error("pumps", "tilt2_deg", "pump tilts must differ"));
            }
            Job::Modes {
                merge_tol: cfg.merge_tol()?,
                branches: s.y_branches.clone(),
                model,
                pump,
                omegas,
                resonance,
            }
        }
        Command::Dynamics => {
            let d = cfg.dynamics()?;
            let params = CouplingParams::from_pump(&pump, 0.0, 0.0)
                .map_err(|e| cfg.error("pumps", "gain_per_mm", e.to_string()))?;
            let z_max = d.z_max_gbar / params.g_bar();
            let n = d.z_points - 1;
            Job::Dynamics {
                rhos: cfg.rho_grid()?,
                params,
                zs: (0..=n).map(|i| z_max * i as f64 / n as f64).collect(),
            }
        }
        Command::Simulate { gain_report } => Job::Simulate {
            config: Box::new(cfg.sim(&model, &pump)?),
            gain_from: gain_report.then(|| cfg.gain_fit_from_um()),
        },
    })
}

/// Runs a job into `dir`; returns a one-line summary.
pub fn execute(job: Job, rng_seed: u64, dir: &mut RunDir) -> Result<String, CliError> {
    match job {
        Job::Surface {
            model,
            pumps,
            omegas,
            n_azimuth,
        } => surface(&model, &pumps, &omegas, n_azimuth, dir),
        Job::Modes {
            model,
            pump,
            omegas,
            branches,
            merge_tol,
            resonance,
        } => modes(&model, &pump, &omegas, &branches, merge_tol, resonance, dir),
        Job::Dynamics { rhos, params, zs } => dynamics(&rhos, &params, &zs, dir),
        Job::Simulate { config, gain_from } => simulate(&config, gain_from, rng_seed, dir),
    }
}

fn surface(
    model: &CrystalModel,
    pumps: &[PumpModeCoord; 2],
    omegas: &[f64],
    n_azimuth: usize,
    dir: &mut RunDir,
) -> Result<String, CliError> {
    let mut counts = Vec::new();
    for (j, p) in pumps.iter().enumerate() {
        let start = Instant::now();
        let points = sample_surface(model, p, j + 1, omegas, n_azimuth)?;
        dir.time(&format!("sigma{}", j + 1), start.elapsed().as_secs_f64());
        dir.write_csv(&format!("sigma{}.csv", j + 1), &points)?;
        counts.push(points.len());
    }
    Ok(format!("Σ₁: {} points, Σ₂: {} points", counts[0], counts[1]))
}

/// A mode in both internal and presentation units.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ModeView {
    pub qx: f64,
    pub qy: f64,
    pub omega: f64,
    pub lambda_nm: f64,
    pub theta_x_deg: f64,
    pub theta_y_deg: f64,
}

impl ModeView {
    fn new(model: &CrystalModel, m: &ModeCoord) -> Result<Self, CliError> {
        let ks = model.signal_wavenumber(m.omega)?;
        Ok(ModeView {
            qx: m.qx,
            qy: m.qy,
            omega: m.omega,
            lambda_nm: 1e3 * wavelength(model.signal_frequency() + m.omega),
            theta_x_deg: (m.qx / ks).to_degrees(),
            theta_y_deg: (m.qy / ks).to_degrees(),
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClusterView {
    pub kind: ClusterKind,
    pub y_branch: YBranch,
    pub resonant_pump: Option<usize>,
    pub shared: ModeView,
    pub coupled_b: ModeView,
    pub coupled_c: ModeView,
    pub shared_conjugate: Option<ModeView>,
    pub residuals: ClusterResiduals,
}

impl ClusterView {
    fn new(model: &CrystalModel, c: &ModeCluster) -> Result<Self, CliError> {
        Ok(ClusterView {
            kind: c.kind,
            y_branch: c.y_branch,
            resonant_pump: c.resonant_pump,
            shared: ModeView::new(model, &c.shared)?,
            coupled_b: ModeView::new(model, &c.coupled_b)?,
            coupled_c: ModeView::new(model, &c.coupled_c)?,
            shared_conjugate: c.shared_conjugate.as_ref().map(|m| ModeView::new(model, m)).transpose()?,
            residuals: c.residuals,
        })
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RootView {
    pub pump: usize,
    pub beta_formula_deg: f64,
    pub beta_refined_deg: Option<f64>,
}

impl From<ResonanceRoot> for RootView {
    fn from(r: ResonanceRoot) -> Self {
        RootView {
            pump: r.pump,
            beta_formula_deg: r.beta_formula.to_degrees(),
            beta_refined_deg: r.beta_refined.map(f64::to_degrees),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ResonanceView {
    pub rho0: f64,
    pub roots: Vec<RootView>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModesReport {
    pub merge_tol_per_um: f64,
    pub clusters: Vec<ClusterView>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resonance: Option<ResonanceView>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resonance_unavailable: Option<String>,
}

fn modes(
    model: &CrystalModel,
    pump: &PumpConfig,
    omegas: &[f64],
    branches: &[YBranch],
    merge_tol: f64,
    resonance: bool,
    dir: &mut RunDir,
) -> Result<String, CliError> {
    let start = Instant::now();
    let mut clusters = Vec::new();
    for &omega in omegas {
        for &b in branches {
            if let Some(c) = solve_cluster(model, pump, omega, b, merge_tol)? {
                clusters.push(ClusterView::new(model, &c)?);
            }
        }
    }
    let mut report = ModesReport {
        merge_tol_per_um: merge_tol,
        clusters,
        resonance: None,
        resonance_unavailable: None,
    };
    if resonance {
        match resonance_beta(model, pump.tilt1, pump.tilt2) {
            Ok(r) => {
                let mut roots = vec![RootView::from(r.plus), RootView::from(r.minus)];
                roots.sort_by_key(|r| r.pump);
                report.resonance = Some(ResonanceView { rho0: r.rho0, roots });
            }
            Err(e @ dppdc_core::Error::NoResonance { .. }) => report.resonance_unavailable = Some(e.to_string()),
            Err(e) => return Err(e.into()),
        }
    }
    dir.time("solve", start.elapsed().as_secs_f64());
    dir.write_json("clusters.json", &report)?;
    let triplets = report.clusters.iter().filter(|c| c.kind == ClusterKind::Triplet).count();
    let mut line = format!(
        "{} clusters ({triplets} triplets, {} quadruplets)",
        report.clusters.len(),
        report.clusters.len() - triplets
    );
    if let Some(r) = &report.resonance {
        for root in &r.roots {
            if let Some(b) = root.beta_refined_deg {
                line.push_str(&format!("; β{}_res = {b:.3}°", root.pump));
            }
        }
    }
    Ok(line)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct EigenRow {
    pub rho: f64,
    pub lambda_sigma_over_gbar: f64,
    pub lambda_delta_over_gbar: f64,
    pub cos: f64,
    pub sin: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct WitnessRow {
    pub z: f64,
    pub var_f1: f64,
    pub var_f2: f64,
    pub var_f3: f64,
    pub var_f4: f64,
    pub predicted_sigma: f64,
    pub predicted_delta: f64,
}

fn dynamics(rhos: &[f64], params: &CouplingParams, zs: &[f64], dir: &mut RunDir) -> Result<String, CliError> {
    let start = Instant::now();
    let one = num_complex::Complex64::new(1.0, 0.0);
    let mut eigen = Vec::with_capacity(rhos.len());
    for &rho in rhos {
        let p = CouplingParams::new(one, one * rho, 0.0, 0.0)?;
        let d = quad_decompose(&p)?;
        let gb = p.g_bar();
        eigen.push(EigenRow {
            rho,
            lambda_sigma_over_gbar: d.lambda_sigma / gb,
            lambda_delta_over_gbar: d.lambda_delta / gb,
            cos: d.mix_cos,
            sin: d.mix_sin,
        });
    }
    dir.time("eigenvalues", start.elapsed().as_secs_f64());
    dir.write_csv("eigenvalues.csv", &eigen)?;

    let start = Instant::now();
    let dec = quad_decompose(params)?;
    let mut rows = Vec::with_capacity(zs.len());
    for &z in zs {
        let state = GaussianState::vacuum(4).apply_map(&quadruplet_map(&params.with_z(z))?)?;
        let w = witness_variances(&state, &dec, z)?;
        rows.push(WitnessRow {
            z,
            var_f1: w.var_f1,
            var_f2: w.var_f2,
            var_f3: w.var_f3,
            var_f4: w.var_f4,
            predicted_sigma: w.reference_sigma,
            predicted_delta: w.reference_delta,
        });
    }
    dir.time("witness", start.elapsed().as_secs_f64());
    dir.write_csv("witness.csv", &rows)?;
    let best = eigen
        .iter()
        .max_by(|a, b| a.lambda_sigma_over_gbar.total_cmp(&b.lambda_sigma_over_gbar))
        .expect("non-empty sweep");
    Ok(format!(
        "{} ρ rows (max λσ/ḡ = {:.6} at ρ = {:.4}), {} witness rows",
        eigen.len(),
        best.lambda_sigma_over_gbar,
        best.rho,
        rows.len()
    ))
}

#[derive(Debug, Clone, Serialize)]
struct CheckpointRow {
    index: usize,
    z_um: f64,
    far_field: String,
}

#[derive(Debug, Clone, Serialize)]
struct SimSummary {
    realizations: usize,
    vacuum_offset: f64,
    dx_um: f64,
    dt_fs: f64,
    dqx_per_um: f64,
    domega_per_fs: f64,
    diagnostics: RunDiagnostics,
}

fn simulate(cfg: &SimConfig, gain_from: Option<f64>, rng_seed: u64, dir: &mut RunDir) -> Result<String, CliError> {
    let start = Instant::now();
    let rec = run_simulation(cfg, rng_seed)?;
    dir.time("propagation", start.elapsed().as_secs_f64());

    let mut index = Vec::new();
    for k in 0..rec.z.len() {
        let name = format!("far_field_{k:03}.csv");
        dir.write_csv(&name, &rec.qx_omega_map(k))?;
        index.push(CheckpointRow {
            index: k,
            z_um: rec.z[k],
            far_field: name,
        });
    }
    let last = rec.z.len() - 1;
    dir.write_csv("far_field.csv", &rec.qx_omega_map(last))?;
    dir.write_csv("checkpoints.csv", &index)?;
    for (k, state) in rec.fields.iter().enumerate() {
        let mut w = dir.create(&format!("fields_{k:03}.bin"))?;
        write_checkpoint(&mut w, state)?;
    }
    let g = &rec.grid;
    dir.write_json(
        "diagnostics.json",
        &SimSummary {
            realizations: rec.realizations,
            vacuum_offset: rec.vacuum_offset,
            dx_um: g.dx,
            dt_fs: g.dt,
            dqx_per_um: g.dqx(),
            domega_per_fs: g.domega(),
            diagnostics: rec.diagnostics,
        },
    )?;

    let d = rec.diagnostics;
    let mut line = format!("{} checkpoints, {} realizations", rec.z.len(), rec.realizations);
    if !cfg.options.undepleted {
        line.push_str(&format!(", N_p + N_s/2 drift {:.2e}", d.balance_drift));
    }
    if d.evanescent_flagged {
        line.push_str(&format!("; evanescent loss flagged ({:.2e})", d.evanescent_fraction));
    }
    if let Some(z_min) = gain_from {
        let pred = predict_hotspots(&cfg.model, &cfg.pumps.pump, SHARED_SEARCH.0, SHARED_SEARCH.1, BACKGROUND_FRACTION)?;
        let report: GainReport = hotspot_gain(&rec, &pred.windows(g, WINDOW_HALF_BINS), z_min)?;
        dir.write_json("gain_report.json", &serde_json::json!({ "prediction": pred, "fit": report }))?;
        line.push_str(&format!(
            "; hot-spot/background exponent ratio {:.4}{}",
            report.ratio,
            if report.flagged { " (poor fit flagged)" } else { "" }
        ));
    }
    Ok(line)
}
