//! Split-step spectral propagation of the coupled signal/pump envelope
//! equations
//!
//!   ∂A_s/∂z = L_s A_s + (χ₁A_p1 + χ₂A_p2) A_s*
//!   ∂A_pj/∂z = L_p A_pj − (χ_j/2) A_s²
//!
//! on an (x, y, t) grid. L_s, L_p are the exact dispersive phases
//! i(k_z(q, Ω) − k_ref − k′_s Ω), so the frame moves with the signal group
//! velocity at degeneracy and the pump reference is 2k_s + G_z. Each pump
//! direction has its own field so that χ₁ ≠ χ₂ is allowed.
//!
//! Fields are kept in the spectral domain between steps. All transforms are
//! unitary, so Σ|A|² is the same in both domains and |A(q, Ω)|² is a photon
//! number per mode. Transforms use the forward kernel on every axis; bin m
//! of the t axis is read as Ω = m·dΩ (a reflection t → −t of the time
//! window, which nothing observes).

use std::io::{Read, Write};
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::dispersion::{pump_gamma, CrystalModel};
use crate::mode_solver::PumpConfig;
use crate::numeric::fit_line;
use crate::{Error, Result};

type C64 = Complex64;

/// Fraction of total energy that evanescent bins may carry before a run is
/// flagged.
pub const EVANESCENT_FLAG: f64 = 1e-9;
/// Largest relative change of N_p + N_s/2 allowed in one nonlinear step.
pub const BALANCE_LIMIT: f64 = 1e-3;
/// Relative tolerance and iteration cap of the implicit-midpoint solve.
const MIDPOINT_TOL: f64 = 1e-11;
const MIDPOINT_MAX_ITER: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimGrid {
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
    /// μm
    pub dx: f64,
    pub dy: f64,
    /// fs
    pub dt: f64,
    /// μm
    pub crystal_length: f64,
    pub n_steps: usize,
}

impl SimGrid {
    pub fn validate(&self) -> Result<()> {
        for (name, n) in [("nx", self.nx), ("ny", self.ny), ("nt", self.nt)] {
            if !n.is_power_of_two() {
                return Err(Error::InvalidParameter(format!("{name} = {n} is not a power of two")));
            }
        }
        for (name, v) in [
            ("dx", self.dx),
            ("dy", self.dy),
            ("dt", self.dt),
            ("crystal_length", self.crystal_length),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if self.n_steps == 0 {
            return Err(Error::InvalidParameter("n_steps must be at least 1".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nt
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dz(&self) -> f64 {
        self.crystal_length / self.n_steps as f64
    }

    pub fn dqx(&self) -> f64 {
        2.0 * std::f64::consts::PI / (self.nx as f64 * self.dx)
    }

    pub fn dqy(&self) -> f64 {
        2.0 * std::f64::consts::PI / (self.ny as f64 * self.dy)
    }

    pub fn domega(&self) -> f64 {
        2.0 * std::f64::consts::PI / (self.nt as f64 * self.dt)
    }

    /// Flat index with t fastest, then x, then y.
    pub fn index(&self, ix: usize, iy: usize, it: usize) -> usize {
        (iy * self.nx + ix) * self.nt + it
    }

    pub fn unflatten(&self, i: usize) -> (usize, usize, usize) {
        let it = i % self.nt;
        let ixy = i / self.nt;
        (ixy % self.nx, ixy / self.nx, it)
    }

    pub fn qx(&self, ix: usize) -> f64 {
        signed(ix, self.nx) as f64 * self.dqx()
    }

    pub fn qy(&self, iy: usize) -> f64 {
        signed(iy, self.ny) as f64 * self.dqy()
    }

    pub fn omega(&self, it: usize) -> f64 {
        signed(it, self.nt) as f64 * self.domega()
    }

    pub fn x(&self, ix: usize) -> f64 {
        signed(ix, self.nx) as f64 * self.dx
    }

    pub fn y(&self, iy: usize) -> f64 {
        signed(iy, self.ny) as f64 * self.dy
    }

    pub fn t(&self, it: usize) -> f64 {
        signed(it, self.nt) as f64 * self.dt
    }

    /// Nearest spectral bin of a (q_x, q_y, Ω) point.
    pub fn nearest_bin(&self, qx: f64, qy: f64, omega: f64) -> (usize, usize, usize) {
        (
            unsigned((qx / self.dqx()).round() as i64, self.nx),
            unsigned((qy / self.dqy()).round() as i64, self.ny),
            unsigned((omega / self.domega()).round() as i64, self.nt),
        )
    }

    /// 2/3-rule window: |m| ≤ n/3 on every axis.
    pub fn in_window(&self, ix: usize, iy: usize, it: usize) -> bool {
        let keep = |i: usize, n: usize| signed(i, n).unsigned_abs() as usize <= n / 3;
        keep(ix, self.nx) && keep(iy, self.ny) && keep(it, self.nt)
    }
}

fn signed(i: usize, n: usize) -> i64 {
    if i < n.div_ceil(2) {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

fn unsigned(m: i64, n: usize) -> usize {
    m.rem_euclid(n as i64) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PumpProfile {
    /// cw plane waves filling the window; Q_j must sit on the q grid.
    PlaneWave,
    /// e^{−(x²+y²)/w²} in amplitude (w: 1/e² intensity radius, μm) times a
    /// pulse of intensity FWHM `duration` (fs).
    Gaussian { waist: f64, duration: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PumpPulseSpec {
    /// Tilts, rotation, peak amplitudes α_j (√photons per grid cell) and χ_j.
    pub pump: PumpConfig,
    pub profile: PumpProfile,
}

impl PumpPulseSpec {
    pub fn validate(&self, model: &CrystalModel, grid: &SimGrid) -> Result<()> {
        self.pump.validate()?;
        let kp = model.carrier_pump_wavenumber()?;
        let qmax = kp * self.pump.tilt1.abs().max(self.pump.tilt2.abs());
        let q_nyquist = std::f64::consts::PI / grid.dx;
        if q_nyquist <= 2.0 * qmax {
            return Err(Error::InvalidParameter(format!(
                "spectral window max|q| = {q_nyquist:.4} μm⁻¹ does not cover 2·k_p·max|θ_p| = {:.4}",
                2.0 * qmax
            )));
        }
        match self.profile {
            PumpProfile::PlaneWave => {
                for t in [self.pump.tilt1, self.pump.tilt2] {
                    let bins = kp * t / grid.dqx();
                    if (bins - bins.round()).abs() > 1e-6 {
                        return Err(Error::InvalidParameter(format!(
                            "plane-wave pump at Q = {:.6} μm⁻¹ is {bins:.4} bins, not on the q grid",
                            kp * t
                        )));
                    }
                }
            }
            PumpProfile::Gaussian { waist, duration } => {
                let mut checks = vec![("waist", waist, grid.dx), ("duration", duration, grid.dt)];
                if grid.ny > 1 {
                    checks.push(("waist (y)", waist, grid.dy));
                }
                for (name, v, d) in checks {
                    if !(v >= 8.0 * d) {
                        return Err(Error::InvalidParameter(format!(
                            "pump {name} {v} is not resolved (needs ≥ 8 samples of {d})"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// A single spectral bin of a coherent seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedMode {
    pub qx: f64,
    #[serde(default)]
    pub qy: f64,
    pub omega: f64,
    /// √photons in the bin.
    pub amplitude: C64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SeedSpec {
    /// Half a photon of complex Gaussian noise in every signal bin of the
    /// de-aliased window (symmetric-ordering emulation of vacuum).
    StochasticVacuum { realizations: usize },
    /// Deterministic classical seed; a single realization.
    CoherentSeed { modes: Vec<SeedMode> },
}

impl SeedSpec {
    pub fn realizations(&self) -> usize {
        match self {
            SeedSpec::StochasticVacuum { realizations } => *realizations,
            SeedSpec::CoherentSeed { .. } => 1,
        }
    }

    /// Symmetric-ordering offset subtracted from the averaged intensity.
    pub fn vacuum_offset(&self) -> f64 {
        match self {
            SeedSpec::StochasticVacuum { .. } => 0.5,
            SeedSpec::CoherentSeed { .. } => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    /// Freeze the pumps in the nonlinear step.
    pub undepleted: bool,
    /// z positions (μm) at which the signal spectrum is recorded; rounded to
    /// the nearest step.
    pub checkpoints: Vec<f64>,
    /// Keep the full fields of realization 0 at every checkpoint.
    pub keep_fields: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub model: CrystalModel,
    pub grid: SimGrid,
    pub pumps: PumpPulseSpec,
    pub seed: SeedSpec,
    pub options: SimOptions,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.grid.validate()?;
        self.pumps.validate(&self.model, &self.grid)?;
        if self.seed.realizations() == 0 {
            return Err(Error::InvalidParameter("at least one realization is required".into()));
        }
        for &z in &self.options.checkpoints {
            if !(0.0..=self.grid.crystal_length * (1.0 + 1e-12)).contains(&z) {
                return Err(Error::InvalidParameter(format!(
                    "checkpoint z = {z} μm outside [0, {}]",
                    self.grid.crystal_length
                )));
            }
        }
        Ok(())
    }
}

/// Signal and pump envelopes in the spectral domain at position z (μm).
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub dims: [usize; 3],
    pub z: f64,
    pub signal: Vec<C64>,
    pub pumps: [Vec<C64>; 2],
}

impl FieldState {
    pub fn zeros(grid: &SimGrid) -> Self {
        let n = grid.len();
        FieldState {
            dims: [grid.nx, grid.ny, grid.nt],
            z: 0.0,
            signal: vec![C64::new(0.0, 0.0); n],
            pumps: [vec![C64::new(0.0, 0.0); n], vec![C64::new(0.0, 0.0); n]],
        }
    }

    pub fn signal_photons(&self) -> f64 {
        norm_sqr(&self.signal)
    }

    pub fn pump_photons(&self) -> f64 {
        norm_sqr(&self.pumps[0]) + norm_sqr(&self.pumps[1])
    }

    /// N_p + N_s/2.
    pub fn photon_balance(&self) -> f64 {
        self.pump_photons() + 0.5 * self.signal_photons()
    }

    pub fn is_finite(&self) -> bool {
        self.signal
            .iter()
            .chain(&self.pumps[0])
            .chain(&self.pumps[1])
            .all(|c| c.re.is_finite() && c.im.is_finite())
    }
}

fn norm_sqr(v: &[C64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum()
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"DPPDCFLD";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Binary checkpoint: magic "DPPDCFLD", u32 version, u32 field count (3),
/// u64 nx, ny, nt, f64 z, then signal, pump 1, pump 2 as interleaved
/// (re, im) f64. Everything little-endian.
pub fn write_checkpoint<W: Write>(mut w: W, state: &FieldState) -> std::io::Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&3u32.to_le_bytes())?;
    for d in state.dims {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    w.write_all(&state.z.to_le_bytes())?;
    for field in [&state.signal, &state.pumps[0], &state.pumps[1]] {
        for c in field.iter() {
            w.write_all(&c.re.to_le_bytes())?;
            w.write_all(&c.im.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<FieldState> {
    let io = |e: std::io::Error| Error::InvalidParameter(format!("checkpoint read failed: {e}"));
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::InvalidParameter("not a field checkpoint (bad magic)".into()));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4).map_err(io)?;
    let version = u32::from_le_bytes(b4);
    if version != CHECKPOINT_VERSION {
        return Err(Error::InvalidParameter(format!("unsupported checkpoint version {version}")));
    }
    r.read_exact(&mut b4).map_err(io)?;
    let n_fields = u32::from_le_bytes(b4);
    if n_fields != 3 {
        return Err(Error::DimensionMismatch {
            expected: 3,
            found: n_fields as usize,
        });
    }
    let mut dims = [0usize; 3];
    for d in dims.iter_mut() {
        r.read_exact(&mut b8).map_err(io)?;
        *d = u64::from_le_bytes(b8) as usize;
    }
    r.read_exact(&mut b8).map_err(io)?;
    let z = f64::from_le_bytes(b8);
    let n = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .filter(|&n| n <= 1 << 28)
        .ok_or_else(|| Error::InvalidParameter(format!("implausible checkpoint dimensions {dims:?}")))?;
    let mut read_field = || -> Result<Vec<C64>> {
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut b8).map_err(io)?;
            let re = f64::from_le_bytes(b8);
            r.read_exact(&mut b8).map_err(io)?;
            v.push(C64::new(re, f64::from_le_bytes(b8)));
        }
        Ok(v)
    };
    let signal = read_field()?;
    let p1 = read_field()?;
    let p2 = read_field()?;
    Ok(FieldState {
        dims,
        z,
        signal,
        pumps: [p1, p2],
    })
}

/// Unitary multi-axis FFT on the (y, x, t) layout.
struct Spectral {
    grid: SimGrid,
    t: [Arc<dyn Fft<f64>>; 2],
    x: [Arc<dyn Fft<f64>>; 2],
    y: [Arc<dyn Fft<f64>>; 2],
    scale: f64,
}

#[derive(Clone, Copy, PartialEq)]
enum Direction {
    Forward = 0,
    Inverse = 1,
}

struct Scratch {
    line: Vec<C64>,
    fft: Vec<C64>,
}

impl Spectral {
    fn new(grid: &SimGrid) -> Self {
        let mut planner = FftPlanner::new();
        let mut pair = |n: usize| [planner.plan_fft_forward(n), planner.plan_fft_inverse(n)];
        Spectral {
            grid: *grid,
            t: pair(grid.nt),
            x: pair(grid.nx),
            y: pair(grid.ny),
            scale: 1.0 / (grid.len() as f64).sqrt(),
        }
    }

    fn scratch(&self) -> Scratch {
        let len = [&self.t, &self.x, &self.y]
            .iter()
            .flat_map(|p| p.iter().map(|f| f.get_inplace_scratch_len()))
            .max()
            .unwrap_or(0);
        Scratch {
            line: vec![C64::new(0.0, 0.0); self.grid.nx.max(self.grid.ny)],
            fft: vec![C64::new(0.0, 0.0); len],
        }
    }

    fn transform(&self, data: &mut [C64], dir: Direction, s: &mut Scratch) {
        let g = &self.grid;
        let d = dir as usize;
        self.t[d].process_with_scratch(data, &mut s.fft);
        if g.nx > 1 {
            for iy in 0..g.ny {
                for it in 0..g.nt {
                    let line = &mut s.line[..g.nx];
                    for (ix, v) in line.iter_mut().enumerate() {
                        *v = data[g.index(ix, iy, it)];
                    }
                    self.x[d].process_with_scratch(line, &mut s.fft);
                    for (ix, v) in line.iter().enumerate() {
                        data[g.index(ix, iy, it)] = *v;
                    }
                }
            }
        }
        if g.ny > 1 {
            for ix in 0..g.nx {
                for it in 0..g.nt {
                    let line = &mut s.line[..g.ny];
                    for (iy, v) in line.iter_mut().enumerate() {
                        *v = data[g.index(ix, iy, it)];
                    }
                    self.y[d].process_with_scratch(line, &mut s.fft);
                    for (iy, v) in line.iter().enumerate() {
                        data[g.index(ix, iy, it)] = *v;
                    }
                }
            }
        }
        for v in data.iter_mut() {
            *v *= self.scale;
        }
    }
}

/// Precomputed half-step multipliers and window.
struct Linear {
    signal_half: Vec<C64>,
    pump_half: Vec<C64>,
    window: Vec<bool>,
    /// In-window bins that do not propagate.
    evanescent: Vec<usize>,
}

/// Dispersive phase rates (μm⁻¹) of one spectral bin, relative to the
/// co-moving references. `None` marks an evanescent bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinPhase {
    pub signal: Option<f64>,
    pub pump: Option<f64>,
}

/// Phase rates of the bin at (q_x, q_y, Ω).
pub fn bin_phase(model: &CrystalModel, beta: f64, qx: f64, qy: f64, omega: f64) -> Result<BinPhase> {
    let ks0 = model.signal_wavenumber(0.0)?;
    let ks1 = model.signal_group_delay()?;
    let kp0 = model.carrier_pump_wavenumber()?;
    let q2 = qx * qx + qy * qy;
    let kz = |k: f64| (k * k > q2).then(|| (k * k - q2).sqrt());
    let ks = model.signal_wavenumber(omega)?;
    let gamma = if model.is_noncritical() || q2 == 0.0 {
        model.cut_angle
    } else {
        pump_gamma(q2.sqrt() / kp0, beta + qy.atan2(qx), model.cut_angle)
    };
    let kp = model.pump_wavenumber(omega, gamma)?;
    Ok(BinPhase {
        signal: kz(ks).map(|k| k - ks0 - ks1 * omega),
        pump: kz(kp).map(|k| k - 2.0 * ks0 - model.grating_wavenumber() - ks1 * omega),
    })
}

impl Linear {
    fn new(model: &CrystalModel, grid: &SimGrid, beta: f64) -> Result<Self> {
        let half = 0.5 * grid.dz();
        let n = grid.len();
        let zero = C64::new(0.0, 0.0);
        let mut lin = Linear {
            signal_half: vec![zero; n],
            pump_half: vec![zero; n],
            window: vec![false; n],
            evanescent: Vec::new(),
        };
        for i in 0..n {
            let (ix, iy, it) = grid.unflatten(i);
            if !grid.in_window(ix, iy, it) {
                continue;
            }
            lin.window[i] = true;
            let ph = bin_phase(model, beta, grid.qx(ix), grid.qy(iy), grid.omega(it))?;
            match ph.signal {
                Some(p) => lin.signal_half[i] = C64::from_polar(1.0, p * half),
                None => lin.evanescent.push(i),
            }
            match ph.pump {
                Some(p) => lin.pump_half[i] = C64::from_polar(1.0, p * half),
                None if ph.signal.is_some() => lin.evanescent.push(i),
                None => {}
            }
        }
        Ok(lin)
    }

    /// Multiplies by the half-step phases; returns the energy (photon
    /// balance units) removed from evanescent bins.
    fn half_step(&self, state: &mut FieldState) -> f64 {
        let zero = C64::new(0.0, 0.0);
        let mut lost = 0.0;
        for &i in &self.evanescent {
            if self.signal_half[i] == zero {
                lost += 0.5 * state.signal[i].norm_sqr();
            }
            if self.pump_half[i] == zero {
                lost += state.pumps.iter().map(|p| p[i].norm_sqr()).sum::<f64>();
            }
        }
        for (a, m) in state.signal.iter_mut().zip(&self.signal_half) {
            *a *= m;
        }
        for p in state.pumps.iter_mut() {
            for (a, m) in p.iter_mut().zip(&self.pump_half) {
                *a *= m;
            }
        }
        lost
    }

    /// Zeroes everything outside the window; returns the removed N_p + N_s/2.
    fn dealias(&self, state: &mut FieldState, pumps: bool) -> f64 {
        let mut lost = 0.0;
        for (i, keep) in self.window.iter().enumerate() {
            if !keep {
                lost += 0.5 * state.signal[i].norm_sqr();
                state.signal[i] = C64::new(0.0, 0.0);
                if pumps {
                    for p in state.pumps.iter_mut() {
                        lost += p[i].norm_sqr();
                        p[i] = C64::new(0.0, 0.0);
                    }
                }
            }
        }
        lost
    }
}

/// Implicit midpoint of the pointwise undepleted map with a fixed drive d:
/// s′ = s + dz·d·((s + s′)/2)*. Linear in (s, s*), so solved in closed form.
fn undepleted_point(s: C64, drive: C64, dz: f64) -> Option<C64> {
    let hd = 0.5 * dz * drive;
    let det = 1.0 - hd.norm_sqr();
    (det > 0.0).then(|| 2.0 * (s + hd * s.conj()) / det - s)
}

/// Diagnostics accumulated over one realization.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct RunDiagnostics {
    pub evanescent_bins: usize,
    /// Largest fraction of the total energy removed from evanescent bins.
    pub evanescent_fraction: f64,
    pub evanescent_flagged: bool,
    pub balance_initial: f64,
    pub balance_final: f64,
    /// |Δ(N_p + N_s/2)| / (N_p + N_s/2) over the run.
    pub balance_drift: f64,
    /// N_p + N_s/2 removed by the de-aliasing mask over the run.
    pub mask_loss: f64,
    pub steps: usize,
}

impl RunDiagnostics {
    fn merge(&mut self, other: &RunDiagnostics) {
        self.evanescent_bins = self.evanescent_bins.max(other.evanescent_bins);
        self.evanescent_fraction = self.evanescent_fraction.max(other.evanescent_fraction);
        self.evanescent_flagged |= other.evanescent_flagged;
        self.balance_drift = self.balance_drift.max(other.balance_drift);
        self.mask_loss = self.mask_loss.max(other.mask_loss);
    }
}

/// Propagates fields through the crystal.
pub struct Propagator {
    grid: SimGrid,
    chi: [f64; 2],
    undepleted: bool,
    spectral: Spectral,
    linear: Linear,
}

impl Propagator {
    pub fn new(model: &CrystalModel, grid: &SimGrid, pump: &PumpConfig, undepleted: bool) -> Result<Self> {
        grid.validate()?;
        Ok(Propagator {
            grid: *grid,
            chi: [pump.chi1, pump.chi2],
            undepleted,
            spectral: Spectral::new(grid),
            linear: Linear::new(model, grid, pump.beta)?,
        })
    }

    pub fn evanescent_bins(&self) -> usize {
        self.linear.evanescent.len()
    }

    /// Exact dispersive step over `dz` (two half-steps of the precomputed
    /// multiplier when `dz` equals the grid step).
    pub fn linear_step(&self, state: &mut FieldState) -> f64 {
        let lost = self.linear.half_step(state) + self.linear.half_step(state);
        state.z += self.grid.dz();
        lost
    }

    /// Full nonlinear step over dz, followed by de-aliasing. Returns the
    /// mask loss.
    pub fn nonlinear_step(&self, state: &mut FieldState) -> Result<f64> {
        let mut scratch = self.spectral.scratch();
        let mut work = state.clone();
        self.nonlinear_in_place(&mut work, &mut scratch)?;
        *state = work;
        Ok(self.linear.dealias(state, !self.undepleted))
    }

    fn nonlinear_in_place(&self, state: &mut FieldState, s: &mut Scratch) -> Result<()> {
        if self.undepleted {
            self.nonlinear_undepleted(state, s)?;
        } else {
            self.nonlinear_projected(state, s)?;
        }
        if !state.is_finite() {
            return Err(Error::NumericalFailure {
                z: state.z,
                detail: "non-finite field values".into(),
            });
        }
        Ok(())
    }

    fn nonlinear_undepleted(&self, state: &mut FieldState, s: &mut Scratch) -> Result<()> {
        let mut pumps_real = state.pumps.clone();
        for p in pumps_real.iter_mut() {
            self.spectral.transform(p, Direction::Inverse, s);
        }
        self.spectral.transform(&mut state.signal, Direction::Inverse, s);
        let [chi1, chi2] = self.chi;
        let dz = self.grid.dz();
        for ((a, p1), p2) in state.signal.iter_mut().zip(&pumps_real[0]).zip(&pumps_real[1]) {
            *a = undepleted_point(*a, chi1 * p1 + chi2 * p2, dz).ok_or_else(|| Error::NumericalFailure {
                z: state.z,
                detail: "gain per step too large for the midpoint rule; reduce dz".into(),
            })?;
        }
        self.spectral.transform(&mut state.signal, Direction::Forward, s);
        Ok(())
    }

    /// Implicit midpoint of the de-aliased (Galerkin) system: the midpoint
    /// fields m solve m = u + (dz/2)·P F(m), with F evaluated in real space
    /// and P the window mask. The projected system keeps N_p + N_s/2
    /// exactly, so the step conserves it to the iteration tolerance and
    /// nothing is left outside the window for the mask to remove.
    fn nonlinear_projected(&self, state: &mut FieldState, s: &mut Scratch) -> Result<()> {
        let before = state.photon_balance();
        let h = 0.5 * self.grid.dz();
        let [chi1, chi2] = self.chi;
        let window = &self.linear.window;
        let old = [state.signal.clone(), state.pumps[0].clone(), state.pumps[1].clone()];
        let mut mid = old.clone();
        let mut work = old.clone();
        let mut converged = false;
        for _ in 0..MIDPOINT_MAX_ITER {
            for (w, m) in work.iter_mut().zip(&mid) {
                w.copy_from_slice(m);
                self.spectral.transform(w, Direction::Inverse, s);
            }
            let [ws, wp1, wp2] = &mut work;
            for ((a, p1), p2) in ws.iter_mut().zip(wp1.iter_mut()).zip(wp2.iter_mut()) {
                let sq = *a * *a;
                *a = (chi1 * *p1 + chi2 * *p2) * a.conj();
                *p1 = -0.5 * chi1 * sq;
                *p2 = -0.5 * chi2 * sq;
            }
            let mut worst = 0.0f64;
            for ((w, m), u) in work.iter_mut().zip(mid.iter_mut()).zip(&old) {
                self.spectral.transform(w, Direction::Forward, s);
                let (mut change, mut size) = (0.0, 0.0);
                for (i, keep) in window.iter().enumerate() {
                    let v = if *keep { u[i] + h * w[i] } else { u[i] };
                    change += (v - m[i]).norm_sqr();
                    size += v.norm_sqr();
                    m[i] = v;
                }
                if size > 0.0 {
                    worst = worst.max((change / size).sqrt());
                }
            }
            if worst <= MIDPOINT_TOL {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NumericalFailure {
                z: state.z,
                detail: "implicit midpoint iteration did not converge; reduce dz".into(),
            });
        }
        let [p1, p2] = &mut state.pumps;
        for (dst, (m, u)) in [&mut state.signal, p1, p2].into_iter().zip(mid.iter().zip(&old)) {
            for ((d, m), u) in dst.iter_mut().zip(m).zip(u) {
                *d = 2.0 * m - u;
            }
        }
        let after = state.photon_balance();
        if before > 0.0 && ((after - before) / before).abs() > BALANCE_LIMIT {
            return Err(Error::NumericalFailure {
                z: state.z,
                detail: format!("photon balance changed by {:.3e} in one step", (after - before) / before),
            });
        }
        Ok(())
    }

    /// One Strang step: half linear, nonlinear, de-alias, half linear.
    fn step(&self, state: &mut FieldState, s: &mut Scratch, diag: &mut RunDiagnostics) -> Result<()> {
        let mut lost = self.linear.half_step(state);
        self.nonlinear_in_place(state, s)?;
        diag.mask_loss += self.linear.dealias(state, !self.undepleted);
        lost += self.linear.half_step(state);
        state.z += self.grid.dz();
        if lost > 0.0 {
            let frac = lost / state.photon_balance().max(f64::MIN_POSITIVE);
            diag.evanescent_fraction = diag.evanescent_fraction.max(frac);
            diag.evanescent_flagged |= frac > EVANESCENT_FLAG;
        }
        diag.steps += 1;
        Ok(())
    }

    /// Propagates through `steps` steps, calling `visit` after each one.
    pub fn propagate<F: FnMut(usize, &FieldState)>(
        &self,
        state: &mut FieldState,
        steps: usize,
        mut visit: F,
    ) -> Result<RunDiagnostics> {
        let mut s = self.spectral.scratch();
        let mut diag = RunDiagnostics {
            evanescent_bins: self.evanescent_bins(),
            balance_initial: state.photon_balance(),
            ..Default::default()
        };
        self.linear.dealias(state, true);
        for k in 1..=steps {
            self.step(state, &mut s, &mut diag)?;
            visit(k, state);
        }
        diag.balance_final = state.photon_balance();
        diag.balance_drift = if diag.balance_initial > 0.0 {
            ((diag.balance_final - diag.balance_initial) / diag.balance_initial).abs()
        } else {
            0.0
        };
        Ok(diag)
    }

    /// Fourier transform of a real-space field into the spectral domain.
    pub fn to_spectral(&self, field: &mut [C64]) {
        let mut s = self.spectral.scratch();
        self.spectral.transform(field, Direction::Forward, &mut s);
    }

    pub fn to_real(&self, field: &mut [C64]) {
        let mut s = self.spectral.scratch();
        self.spectral.transform(field, Direction::Inverse, &mut s);
    }
}

/// Initial pump fields (spectral domain).
pub fn pump_fields(model: &CrystalModel, grid: &SimGrid, spec: &PumpPulseSpec) -> Result<[Vec<C64>; 2]> {
    let kp = model.carrier_pump_wavenumber()?;
    let p = &spec.pump;
    let mut out = [vec![C64::new(0.0, 0.0); grid.len()], vec![C64::new(0.0, 0.0); grid.len()]];
    for (field, (alpha, tilt)) in out.iter_mut().zip([(p.alpha1, p.tilt1), (p.alpha2, p.tilt2)]) {
        let q = kp * tilt;
        for (i, v) in field.iter_mut().enumerate() {
            let (ix, iy, it) = grid.unflatten(i);
            let (x, y, t) = (grid.x(ix), grid.y(iy), grid.t(it));
            let envelope = match spec.profile {
                PumpProfile::PlaneWave => 1.0,
                PumpProfile::Gaussian { waist, duration } => {
                    let r2 = x * x + if grid.ny > 1 { y * y } else { 0.0 };
                    (-r2 / (waist * waist) - 2.0 * std::f64::consts::LN_2 * t * t / (duration * duration)).exp()
                }
            };
            *v = alpha * C64::from_polar(envelope, q * x);
        }
    }
    let spectral = Spectral::new(grid);
    let mut s = spectral.scratch();
    for f in out.iter_mut() {
        spectral.transform(f, Direction::Forward, &mut s);
    }
    Ok(out)
}

/// Initial signal (spectral domain) for one realization.
pub fn seed_signal(grid: &SimGrid, seed: &SeedSpec, rng: &mut ChaCha8Rng) -> Vec<C64> {
    let mut v = vec![C64::new(0.0, 0.0); grid.len()];
    match seed {
        SeedSpec::StochasticVacuum { .. } => {
            for (i, a) in v.iter_mut().enumerate() {
                let (ix, iy, it) = grid.unflatten(i);
                if grid.in_window(ix, iy, it) {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    *a = C64::new(re, im) * 0.5;
                }
            }
        }
        SeedSpec::CoherentSeed { modes } => {
            for m in modes {
                let (ix, iy, it) = grid.nearest_bin(m.qx, m.qy, m.omega);
                v[grid.index(ix, iy, it)] += m.amplitude;
            }
        }
    }
    v
}

/// Realization-averaged signal spectra at the checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct FarFieldRecord {
    pub grid: SimGrid,
    pub z: Vec<f64>,
    /// ⟨|A_s(q, Ω)|²⟩ − vacuum offset, flat grid order, one per checkpoint.
    pub intensity: Vec<Vec<f64>>,
    pub vacuum_offset: f64,
    pub realizations: usize,
    pub diagnostics: RunDiagnostics,
    /// Fields of realization 0 at the checkpoints, when requested.
    pub fields: Vec<FieldState>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FarFieldPoint {
    pub qx: f64,
    pub omega: f64,
    pub intensity: f64,
}

impl FarFieldRecord {
    /// (q_x, Ω) map summed over q_y at checkpoint `k`, in-window bins only,
    /// ordered by q_x then Ω.
    pub fn qx_omega_map(&self, k: usize) -> Vec<FarFieldPoint> {
        let g = &self.grid;
        let mut bins: Vec<(i64, i64)> = Vec::new();
        for ix in 0..g.nx {
            for it in 0..g.nt {
                if g.in_window(ix, 0, it) {
                    bins.push((signed(ix, g.nx), signed(it, g.nt)));
                }
            }
        }
        bins.sort_unstable();
        bins.into_iter()
            .map(|(mx, mt)| {
                let (ix, it) = (unsigned(mx, g.nx), unsigned(mt, g.nt));
                let intensity = (0..g.ny).map(|iy| self.intensity[k][g.index(ix, iy, it)]).sum();
                FarFieldPoint {
                    qx: g.qx(ix),
                    omega: g.omega(it),
                    intensity,
                }
            })
            .collect()
    }

    /// Brightest bin inside a window at checkpoint `k`.
    pub fn window_peak(&self, k: usize, window: &GainWindow) -> Option<(f64, f64, f64, f64)> {
        let g = &self.grid;
        let mut best: Option<(f64, f64, f64, f64)> = None;
        for (i, &v) in self.intensity[k].iter().enumerate() {
            let (ix, iy, it) = g.unflatten(i);
            let (qx, qy, om) = (g.qx(ix), g.qy(iy), g.omega(it));
            if window.contains(qx, qy, om) && best.is_none_or(|b| v > b.0) {
                best = Some((v, qx, qy, om));
            }
        }
        best
    }
}

/// Runs all realizations and averages the signal spectra.
///
/// Realization r draws its noise from ChaCha8 seeded with `rng_seed` on
/// stream r, and the average is reduced in realization order, so the result
/// does not depend on the thread count.
pub fn run_simulation(cfg: &SimConfig, rng_seed: u64) -> Result<FarFieldRecord> {
    cfg.validate()?;
    let grid = cfg.grid;
    let prop = Propagator::new(&cfg.model, &grid, &cfg.pumps.pump, cfg.options.undepleted)?;
    let pumps = pump_fields(&cfg.model, &grid, &cfg.pumps)?;
    let dz = grid.dz();
    let mut check_steps: Vec<usize> = cfg
        .options
        .checkpoints
        .iter()
        .map(|z| (z / dz).round() as usize)
        .collect();
    check_steps.sort_unstable();
    check_steps.dedup();
    let n_real = cfg.seed.realizations();

    let runs: Vec<Result<(Vec<Vec<f64>>, RunDiagnostics, Vec<FieldState>)>> = (0..n_real)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
            rng.set_stream(r as u64);
            let mut state = FieldState::zeros(&grid);
            state.pumps = pumps.clone();
            state.signal = seed_signal(&grid, &cfg.seed, &mut rng);
            let mut spectra = Vec::with_capacity(check_steps.len());
            let mut fields = Vec::new();
            let keep = cfg.options.keep_fields && r == 0;
            let mut record = |s: &FieldState| {
                spectra.push(s.signal.iter().map(|c| c.norm_sqr()).collect::<Vec<f64>>());
                if keep {
                    fields.push(s.clone());
                }
            };
            if check_steps.first() == Some(&0) {
                let mut s0 = state.clone();
                prop.linear.dealias(&mut s0, true);
                record(&s0);
            }
            let diag = prop.propagate(&mut state, grid.n_steps, |k, s| {
                if check_steps.binary_search(&k).is_ok() {
                    record(s);
                }
            })?;
            Ok((spectra, diag, fields))
        })
        .collect();

    let mut intensity: Vec<Vec<f64>> = vec![vec![0.0; grid.len()]; check_steps.len()];
    let mut diagnostics = RunDiagnostics::default();
    let mut fields = Vec::new();
    for (r, run) in runs.into_iter().enumerate() {
        let (spectra, diag, f) = run?;
        for (acc, s) in intensity.iter_mut().zip(&spectra) {
            for (a, v) in acc.iter_mut().zip(s) {
                *a += v;
            }
        }
        if r == 0 {
            diagnostics = diag;
            fields = f;
        } else {
            diagnostics.merge(&diag);
        }
    }
    let offset = cfg.seed.vacuum_offset();
    for acc in intensity.iter_mut() {
        for (i, a) in acc.iter_mut().enumerate() {
            let (ix, iy, it) = grid.unflatten(i);
            let vac = if grid.in_window(ix, iy, it) { offset } else { 0.0 };
            *a = *a / n_real as f64 - vac;
        }
    }
    Ok(FarFieldRecord {
        grid,
        z: check_steps.iter().map(|&k| k as f64 * dz).collect(),
        intensity,
        vacuum_offset: offset,
        realizations: n_real,
        diagnostics,
        fields,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    HotSpot,
    Background,
}

/// Rectangular region of (q_x, q_y, Ω) space; bounds inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainWindow {
    pub label: String,
    pub kind: WindowKind,
    pub qx: [f64; 2],
    #[serde(default = "all_qy")]
    pub qy: [f64; 2],
    pub omega: [f64; 2],
}

fn all_qy() -> [f64; 2] {
    [f64::NEG_INFINITY, f64::INFINITY]
}

impl GainWindow {
    /// Window of ± `half_bins` bins around a point.
    pub fn around(label: &str, kind: WindowKind, grid: &SimGrid, qx: f64, omega: f64, half_bins: f64) -> Self {
        let (hq, ho) = (half_bins * grid.dqx() * (1.0 + 1e-9), half_bins * grid.domega() * (1.0 + 1e-9));
        GainWindow {
            label: label.to_string(),
            kind,
            qx: [qx - hq, qx + hq],
            qy: all_qy(),
            omega: [omega - ho, omega + ho],
        }
    }

    pub fn contains(&self, qx: f64, qy: f64, omega: f64) -> bool {
        (self.qx[0]..=self.qx[1]).contains(&qx)
            && (self.qy[0]..=self.qy[1]).contains(&qy)
            && (self.omega[0]..=self.omega[1]).contains(&omega)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowFit {
    pub label: String,
    pub kind: WindowKind,
    /// Λ in I ∝ e^{2Λz}, μm⁻¹.
    pub exponent: f64,
    pub r_squared: f64,
    pub flagged: bool,
    /// Brightest bin at the last checkpoint.
    pub peak_qx: f64,
    pub peak_omega: f64,
    pub peak_intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainReport {
    pub windows: Vec<WindowFit>,
    pub hotspot_exponent: f64,
    pub background_exponent: f64,
    /// Mean hot-spot exponent over mean background exponent.
    pub ratio: f64,
    /// Any fit with R² < 0.99.
    pub flagged: bool,
}

/// Fits ln(peak intensity) against z in each window over the checkpoints
/// with z ≥ `z_min`.
pub fn hotspot_gain(record: &FarFieldRecord, windows: &[GainWindow], z_min: f64) -> Result<GainReport> {
    let ks: Vec<usize> = (0..record.z.len()).filter(|&k| record.z[k] >= z_min).collect();
    if ks.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "gain fit needs at least 3 checkpoints with z ≥ {z_min} μm, found {}",
            ks.len()
        )));
    }
    let mut fits = Vec::new();
    for w in windows {
        let mut zs = Vec::new();
        let mut ln = Vec::new();
        let mut last = None;
        for &k in &ks {
            let peak = record
                .window_peak(k, w)
                .ok_or_else(|| Error::InvalidParameter(format!("window '{}' contains no bins", w.label)))?;
            if !(peak.0 > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "window '{}' has no growth at z = {} μm",
                    w.label, record.z[k]
                )));
            }
            zs.push(record.z[k]);
            ln.push(peak.0.ln());
            last = Some(peak);
        }
        let fit = fit_line(&zs, &ln)
            .ok_or_else(|| Error::InvalidParameter(format!("degenerate fit in window '{}'", w.label)))?;
        let peak = last.expect("at least three checkpoints");
        fits.push(WindowFit {
            label: w.label.clone(),
            kind: w.kind,
            exponent: 0.5 * fit.slope,
            r_squared: fit.r_squared,
            flagged: fit.r_squared < 0.99,
            peak_qx: peak.1,
            peak_omega: peak.3,
            peak_intensity: peak.0,
        });
    }
    let mean = |kind: WindowKind| {
        let v: Vec<f64> = fits.iter().filter(|f| f.kind == kind).map(|f| f.exponent).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let hot = mean(WindowKind::HotSpot)
        .ok_or_else(|| Error::InvalidParameter("no hot-spot window given".into()))?;
    let bg = mean(WindowKind::Background)
        .ok_or_else(|| Error::InvalidParameter("no background window given".into()))?;
    Ok(GainReport {
        flagged: fits.iter().any(|f| f.flagged),
        windows: fits,
        hotspot_exponent: hot,
        background_exponent: bg,
        ratio: hot / bg,
    })
}

/// Far-field positions of the in-plane cluster and of two single-pump
/// background points, as (q_x, Ω).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HotSpotPrediction {
    pub omega_shared: f64,
    pub shared: (f64, f64),
    pub coupled_b: (f64, f64),
    pub coupled_c: (f64, f64),
    /// Points on Σ₁ and Σ₂ alone at `background_fraction`·Ω*.
    pub background: [(f64, f64); 2],
}

/// Locates the 2D+1 shared mode in `[omega_lo, omega_hi]`, its partners, and
/// the outer in-plane points of each pump's circle at `background_fraction`
/// of the shared frequency.
pub fn predict_hotspots(
    model: &CrystalModel,
    pump: &PumpConfig,
    omega_lo: f64,
    omega_hi: f64,
    background_fraction: f64,
) -> Result<HotSpotPrediction> {
    use crate::mode_solver::{coupled_modes, in_plane_shared_frequency, shared_mode_qx};
    use crate::phase_geometry::{surface_radius, ModeCoord};

    let omega = in_plane_shared_frequency(model, pump, omega_lo, omega_hi)?;
    let w = ModeCoord::new(shared_mode_qx(model, pump, omega)?, 0.0, omega);
    let (b, c) = coupled_modes(model, pump, &w)?;
    let ob = background_fraction * omega;
    let mut background = [(0.0, ob); 2];
    for (slot, p) in background.iter_mut().zip(pump.pump_modes(model)?) {
        let circle = surface_radius(model, &p, ob)?;
        if circle.f < circle.center_qy * circle.center_qy {
            return Err(Error::InvalidParameter(format!(
                "no in-plane background point at Ω = {ob} rad/fs"
            )));
        }
        let r = (circle.f - circle.center_qy * circle.center_qy).sqrt();
        let (lo, hi) = (circle.center_qx - r, circle.center_qx + r);
        slot.0 = if lo.abs() > hi.abs() { lo } else { hi };
    }
    Ok(HotSpotPrediction {
        omega_shared: omega,
        shared: (w.qx, w.omega),
        coupled_b: (b.qx, b.omega),
        coupled_c: (c.qx, c.omega),
        background,
    })
}

impl HotSpotPrediction {
    /// Hot-spot windows (shared, b, c) and background windows (Σ₁, Σ₂) of
    /// ± `half_bins` bins.
    pub fn windows(&self, grid: &SimGrid, half_bins: f64) -> Vec<GainWindow> {
        let hot = [("shared", self.shared), ("coupled_b", self.coupled_b), ("coupled_c", self.coupled_c)];
        let bg = [("sigma1", self.background[0]), ("sigma2", self.background[1])];
        hot.iter()
            .map(|(l, p)| GainWindow::around(l, WindowKind::HotSpot, grid, p.0, p.1, half_bins))
            .chain(bg.iter().map(|(l, p)| GainWindow::around(l, WindowKind::Background, grid, p.0, p.1, half_bins)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mode_dynamics::two_mode_squeezer;

    fn pplt() -> CrystalModel {
        CrystalModel::pplt_reference().with_collinear_design().unwrap()
    }

    /// Small grid with the pumps at ±`bins` q bins.
    fn small_grid(model: &CrystalModel, tilt: f64, bins: f64, nx: usize, nt: usize, length: f64, steps: usize) -> SimGrid {
        let kp = model.carrier_pump_wavenumber().unwrap();
        let dq = kp * tilt / bins;
        SimGrid {
            nx,
            ny: 1,
            nt,
            dx: 2.0 * std::f64::consts::PI / (nx as f64 * dq),
            dy: 1.0,
            dt: 5.0,
            crystal_length: length,
            n_steps: steps,
        }
    }

    fn pumps(tilt: f64, a1: f64, a2: f64, chi: f64) -> PumpPulseSpec {
        PumpPulseSpec {
            pump: PumpConfig::new(-tilt, tilt, 0.0, C64::new(a1, 0.0), C64::new(a2, 0.0), chi, chi).unwrap(),
            profile: PumpProfile::PlaneWave,
        }
    }

    fn random_state(grid: &SimGrid, seed: u64) -> FieldState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = FieldState::zeros(grid);
        s.signal = seed_signal(grid, &SeedSpec::StochasticVacuum { realizations: 1 }, &mut rng);
        s.pumps[0] = seed_signal(grid, &SeedSpec::StochasticVacuum { realizations: 1 }, &mut rng);
        s
    }

    #[test]
    fn grid_validation() {
        let model = pplt();
        let mut g = small_grid(&model, 0.02, 10.0, 64, 32, 100.0, 10);
        assert!(g.validate().is_ok());
        g.nx = 60;
        assert!(g.validate().is_err());
        let g = small_grid(&model, 0.02, 10.0, 64, 32, 100.0, 10);
        // pump off the q grid
        let off = pumps(0.02 * 1.013, 1.0, 1.0, 1e-4);
        assert!(off.validate(&model, &g).is_err());
        // window too narrow for the tilts
        let narrow = small_grid(&model, 0.02, 30.0, 64, 32, 100.0, 10);
        assert!(pumps(0.02, 1.0, 1.0, 1e-4).validate(&model, &narrow).is_err());
        let gauss = PumpPulseSpec {
            profile: PumpProfile::Gaussian {
                waist: 2.0 * g.dx,
                duration: 100.0,
            },
            ..pumps(0.02, 1.0, 1.0, 1e-4)
        };
        assert!(gauss.validate(&model, &g).is_err());
    }

    #[test]
    fn bin_bookkeeping() {
        let model = pplt();
        let g = small_grid(&model, 0.02, 10.0, 64, 32, 100.0, 10);
        for i in [0, 5, 700, g.len() - 1] {
            let (ix, iy, it) = g.unflatten(i);
            assert_eq!(g.index(ix, iy, it), i);
            assert_eq!(g.nearest_bin(g.qx(ix), g.qy(iy), g.omega(it)), (ix, iy, it));
        }
        assert_eq!(g.qx(63), -g.dqx());
        assert!(g.in_window(21, 0, 10) && !g.in_window(22, 0, 10) && !g.in_window(0, 0, 11));
    }

    #[test]
    fn zero_field_stays_zero() {
        let model = pplt();
        let g = small_grid(&model, 0.02, 10.0, 32, 32, 100.0, 10);
        let prop = Propagator::new(&model, &g, &pumps(0.02, 1.0, 1.0, 1e-4).pump, false).unwrap();
        let mut s = FieldState::zeros(&g);
        prop.linear_step(&mut s);
        prop.nonlinear_step(&mut s).unwrap();
        assert_eq!(s.photon_balance(), 0.0);
    }

    #[test]
    fn plane_wave_bin_phase_matches_dispersion() {
        let model = pplt();
        let g = small_grid(&model, 0.02, 10.0, 32, 32, 1000.0, 50);
        let prop = Propagator::new(&model, &g, &pumps(0.02, 1.0, 1.0, 1e-4).pump, false).unwrap();
        let (ix, it) = (3, 29);
        let i = g.index(ix, 0, it);
        let mut s = FieldState::zeros(&g);
        s.signal[i] = C64::new(1.0, 0.0);
        s.pumps[1][i] = C64::new(1.0, 0.0);
        for _ in 0..g.n_steps {
            prop.linear_step(&mut s);
        }
        // scalar evaluation straight from the dispersion model
        let (q, om) = (g.qx(ix), g.omega(it));
        let ks = model.signal_wavenumber(om).unwrap();
        let kp = model.pump_wavenumber(om, model.cut_angle).unwrap();
        let ks0 = model.signal_wavenumber(0.0).unwrap();
        let k1 = model.signal_group_delay().unwrap();
        let phi_s = ((ks * ks - q * q).sqrt() - ks0 - k1 * om) * g.crystal_length;
        let phi_p = ((kp * kp - q * q).sqrt() - 2.0 * ks0 - model.grating_wavenumber() - k1 * om) * g.crystal_length;
        assert!((s.signal[i] - C64::from_polar(1.0, phi_s)).norm() < 1e-9);
        assert!((s.pumps[1][i] - C64::from_polar(1.0, phi_p)).norm() < 1e-9);
        assert!((s.z - g.crystal_length).abs() < 1e-9);
    }

    #[test]
    fn linear_step_is_unitary() {
        let model = pplt();
        let g = small_grid(&model, 0.02, 10.0, 32, 32, 1000.0, 100);
        let prop = Propagator::new(&model, &g, &pumps(0.02, 1.0, 1.0, 1e-4).pump, false).unwrap();
        let mut s = random_state(&g, 3);
        let (n_s, n_p) = (s.signal_photons(), s.pump_photons());
        for _ in 0..1000 {
            prop.linear_step(&mut s);
        }
        assert!((s.signal_photons() - n_s).abs() < 1e-12 * n_s);
        assert!((s.pump_photons() - n_p).abs() < 1e-12 * n_p);
    }

    #[test]
    fn transforms_are_unitary_and_invertible() {
        let model = pplt();
        for ny in [1, 4] {
            let mut g = small_grid(&model, 0.02, 10.0, 16, 8, 100.0, 10);
            g.ny = ny;
            let prop = Propagator::new(&model, &g, &pumps(0.02, 1.0, 1.0, 1e-4).pump, false).unwrap();
            let s = random_state(&g, 9);
            let mut f = s.signal.clone();
            prop.to_real(&mut f);
            assert!((norm_sqr(&f) - s.signal_photons()).abs() < 1e-12 * s.signal_photons());
            prop.to_spectral(&mut f);
            let err: f64 = f.iter().zip(&s.signal).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(err < 1e-14);
        }
    }

    #[test]
    fn plane_wave_lands_on_one_bin() {
        let model = pplt();
        let g = small_grid(&model, 0.02, 10.0, 32, 16, 100.0, 10);
        let spec = pumps(0.02, 3.0, 1.0, 1e-4);
        let [p1, _] = pump_fields(&model, &g, &spec).unwrap();
        let i = g.index(unsigned(-10, 32), 0, 0);
        assert!((p1[i].norm() - 3.0 * (g.len() as f64).sqrt()).abs() < 1e-9);
        assert!((norm_sqr(&p1) - p1[i].norm_sqr()).abs() < 1e-9 * norm_sqr(&p1));
    }

    #[test]
    fn no_signal_no_growth() {
        let model = pplt();
        let g = small_grid(&model, 0.02, 10.0, 32, 32, 2000.0, 40);
        let spec = pumps(0.02, 1.0, 1.0, 1e-3);
        let prop = Propagator::new(&model, &g, &spec.pump, true).unwrap();
        let mut s = FieldState::zeros(&g);
        s.pumps = pump_fields(&model, &g, &spec).unwrap();
        prop.propagate(&mut s, g.n_steps, |_, _| {}).unwrap();
        assert_eq!(s.signal_photons(), 0.0);
    }

    /// Single pump, one seeded bin: the bin and its partner must follow the
    /// two-mode Bogoliubov solution including the grid's exact mismatch.
    #[test]
    fn seeded_bin_follows_two_mode_solution() {
        let model = pplt();
        let tilt = 0.02;
        let g = small_grid(&model, tilt, 10.0, 32, 32, 1000.0, 400);
        let chi = 1e-3;
        let alpha = 1.0;
        let spec = pumps(tilt, alpha, 0.0, chi);
        // ḡz = 1 with a single pump
        let g1 = chi * alpha;
        let g = SimGrid {
            crystal_length: 1.0 / g1,
            ..g
        };
        let prop = Propagator::new(&model, &g, &spec.pump, true).unwrap();
        let q1 = model.carrier_pump_wavenumber().unwrap() * -tilt;
        let ph = |q: f64, w: f64| bin_phase(&model, 0.0, q, 0.0, w).unwrap();
        let mismatch = |ix: usize, it: usize| {
            let (qs, om) = (g.qx(ix), g.omega(it));
            ph(qs, om).signal.unwrap() + ph(q1 - qs, -om).signal.unwrap() - ph(q1, 0.0).pump.unwrap()
        };
        // non-degenerate in-window bin closest to phase matching
        let (mut best, mut d) = ((0, 0), f64::INFINITY);
        for ix in 0..g.nx {
            for it in 1..g.nt {
                let (px, _, pt) = g.nearest_bin(q1 - g.qx(ix), 0.0, -g.omega(it));
                if g.in_window(ix, 0, it) && g.in_window(px, 0, pt) && mismatch(ix, it).abs() < d.abs() {
                    best = (ix, it);
                    d = mismatch(ix, it);
                }
            }
        }
        let (ix, it) = best;
        let (qs, om) = (g.qx(ix), g.omega(it));
        let mut s = FieldState::zeros(&g);
        s.pumps = pump_fields(&model, &g, &spec).unwrap();
        s.signal[g.index(ix, 0, it)] = C64::new(0.0, 2.0);
        prop.propagate(&mut s, g.n_steps, |_, _| {}).unwrap();
        // the plane-wave pump amplitude in real space is α per cell
        let (u, v) = two_mode_squeezer(C64::new(g1, 0.0), d, g.crystal_length);
        assert!(u.norm_sqr() > 1.5, "seeded bin is not in the gain band: D = {d}");
        let n0 = 4.0;
        let signal = s.signal[g.index(ix, 0, it)].norm_sqr();
        let (px, _, pt) = g.nearest_bin(q1 - qs, 0.0, -om);
        let idler = s.signal[g.index(px, 0, pt)].norm_sqr();
        assert!((signal - n0 * u.norm_sqr()).abs() < 1e-4 * n0 * u.norm_sqr(), "{signal} {}", n0 * u.norm_sqr());
        assert!((idler - n0 * v.norm_sqr()).abs() < 1e-4 * n0 * v.norm_sqr(), "{idler} {}", n0 * v.norm_sqr());
    }

    #[test]
    fn depleted_run_conserves_photon_balance() {
        let model = pplt();
        let tilt = 0.02;
        let g = small_grid(&model, tilt, 8.0, 32, 32, 2000.0, 200);
        // untilted pumps and a collinear degenerate seed: every product stays
        // on the k = 0 bin, so the mask removes nothing and the balance must
        // hold to the midpoint tolerance; the seed is strong enough to
        // deplete the pump
        let spec = pumps(0.0, 10.0, 10.0, 2e-4);
        let prop = Propagator::new(&model, &g, &spec.pump, false).unwrap();
        let mut s = FieldState::zeros(&g);
        s.pumps = pump_fields(&model, &g, &spec).unwrap();
        let seed = SeedSpec::CoherentSeed {
            modes: vec![SeedMode {
                qx: 0.0,
                qy: 0.0,
                omega: 0.0,
                amplitude: C64::new(200.0, 0.0),
            }],
        };
        s.signal = seed_signal(&g, &seed, &mut ChaCha8Rng::seed_from_u64(0));
        let n_p0 = s.pump_photons();
        // the exchange reverses once the pump is exhausted, so track the
        // deepest depletion along z
        let mut n_p_min = n_p0;
        let d = prop
            .propagate(&mut s, g.n_steps, |_, st| n_p_min = n_p_min.min(st.pump_photons()))
            .unwrap();
        assert!(d.balance_drift < 1e-10, "{d:?}");
        assert_eq!(d.mask_loss, 0.0);
        assert!((n_p0 - n_p_min) / n_p0 > 0.5, "pump not depleted: {n_p_min} of {n_p0}");
    }

    #[test]
    fn halving_dz_is_second_order() {
        let model = pplt();
        let tilt = 0.02;
        let spec = pumps(tilt, 1.0, 1.0, 1.5e-3);
        let seed = SeedSpec::CoherentSeed {
            modes: vec![
                SeedMode {
                    qx: 0.0,
                    qy: 0.0,
                    omega: 0.1,
                    amplitude: C64::new(1.0, 0.0),
                },
                SeedMode {
                    qx: 0.1,
                    qy: 0.0,
                    omega: -0.05,
                    amplitude: C64::new(0.0, 1.0),
                },
            ],
        };
        let run = |steps: usize| {
            let g = small_grid(&model, tilt, 4.0, 64, 32, 2000.0, steps);
            let cfg = SimConfig {
                model: model.clone(),
                grid: g,
                pumps: spec,
                seed: seed.clone(),
                options: SimOptions {
                    undepleted: true,
                    checkpoints: vec![g.crystal_length],
                    keep_fields: false,
                },
            };
            run_simulation(&cfg, 1).unwrap().intensity.pop().unwrap()
        };
        let (a, b, c) = (run(200), run(400), run(800));
        let peak = a.iter().cloned().fold(0.0, f64::max);
        let e1 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / peak;
        let e2 = b.iter().zip(&c).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / peak;
        assert!(e1 < 1e-3, "{e1}");
        assert!((e1 / e2 - 4.0).abs() < 0.5, "{e1} {e2}");
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let model = pplt();
        let tilt = 0.02;
        let g = small_grid(&model, tilt, 6.0, 32, 16, 500.0, 20);
        let mut cfg = SimConfig {
            model,
            grid: g,
            pumps: pumps(tilt, 1.0, 1.0, 1e-3),
            seed: SeedSpec::StochasticVacuum { realizations: 4 },
            options: SimOptions {
                undepleted: false,
                checkpoints: vec![0.0, 250.0, 500.0],
                keep_fields: true,
            },
        };
        let a = run_simulation(&cfg, 11).unwrap();
        let b = run_simulation(&cfg, 11).unwrap();
        assert_eq!(a.intensity, b.intensity);
        assert_eq!(a.fields.len(), 3);
        assert_eq!(a.z, vec![0.0, 250.0, 500.0]);
        let c = run_simulation(&cfg, 12).unwrap();
        assert_ne!(a.intensity, c.intensity);
        // vacuum input averages to zero photons after the offset
        let mean0: f64 = a.intensity[0].iter().sum::<f64>() / a.intensity[0].len() as f64;
        assert!(mean0.abs() < 0.05, "{mean0}");
        cfg.seed = SeedSpec::StochasticVacuum { realizations: 0 };
        assert!(run_simulation(&cfg, 1).is_err());
    }

    #[test]
    fn evanescent_bins_are_counted_and_zeroed() {
        let model = pplt();
        // q window far beyond k_s
        let g = SimGrid {
            nx: 64,
            ny: 1,
            nt: 8,
            dx: 0.05,
            dy: 1.0,
            dt: 5.0,
            crystal_length: 10.0,
            n_steps: 2,
        };
        let p = PumpConfig::new(0.0, 0.0, 0.0, C64::new(1.0, 0.0), C64::new(1.0, 0.0), 1e-4, 1e-4).unwrap();
        let prop = Propagator::new(&model, &g, &p, false).unwrap();
        assert!(prop.evanescent_bins() > 0);
        let mut s = FieldState::zeros(&g);
        s.signal.iter_mut().for_each(|c| *c = C64::new(1.0, 0.0));
        let d = prop.propagate(&mut s, 2, |_, _| {}).unwrap();
        assert!(d.evanescent_flagged);
        let i = g.index(unsigned(20, 64), 0, 0);
        assert!(20.0 * g.dqx() > model.signal_wavenumber(0.0).unwrap());
        assert_eq!(s.signal[i], C64::new(0.0, 0.0));
    }

    #[test]
    fn checkpoint_round_trip() {
        let model = pplt();
        let g = small_grid(&model, 0.02, 10.0, 8, 4, 100.0, 10);
        let mut s = random_state(&g, 5);
        s.z = 1234.5;
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &s).unwrap();
        assert_eq!(buf.len(), 8 + 4 + 4 + 24 + 8 + 3 * 16 * g.len());
        assert_eq!(&buf[..8], b"DPPDCFLD");
        assert_eq!(read_checkpoint(&buf[..]).unwrap(), s);
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(&bad[..]).is_err());
        assert!(read_checkpoint(&buf[..buf.len() - 1]).is_err());
    }

    fn synthetic_record(rates: &[(i64, i64, f64)], zs: &[f64]) -> FarFieldRecord {
        let grid = SimGrid {
            nx: 16,
            ny: 1,
            nt: 16,
            dx: 1.0,
            dy: 1.0,
            dt: 1.0,
            crystal_length: 10.0,
            n_steps: 10,
        };
        let intensity = zs
            .iter()
            .map(|&z| {
                let mut v = vec![1e-3; grid.len()];
                for &(mx, mt, lam) in rates {
                    v[grid.index(unsigned(mx, 16), 0, unsigned(mt, 16))] = (2.0 * lam * z).exp();
                }
                v
            })
            .collect();
        FarFieldRecord {
            grid,
            z: zs.to_vec(),
            intensity,
            vacuum_offset: 0.0,
            realizations: 1,
            diagnostics: RunDiagnostics::default(),
            fields: vec![],
        }
    }

    #[test]
    fn gain_fit_recovers_exponents() {
        let zs = [1.0, 2.0, 3.0, 4.0];
        let rec = synthetic_record(&[(0, 0, 0.7), (2, -1, 0.5)], &zs);
        let g = rec.grid;
        let w = [
            GainWindow::around("hot", WindowKind::HotSpot, &g, 0.0, 0.0, 0.4),
            GainWindow::around("bg", WindowKind::Background, &g, 2.0 * g.dqx(), -g.domega(), 0.4),
        ];
        let r = hotspot_gain(&rec, &w, 0.0).unwrap();
        assert!((r.ratio - 1.4).abs() < 1e-12);
        assert!(!r.flagged);
        assert!(hotspot_gain(&rec, &w, 2.5).is_err());
        assert!(hotspot_gain(&rec, &w[..1], 0.0).is_err());
    }

    #[test]
    fn gain_fit_flags_non_exponential_growth() {
        let zs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let mut rec = synthetic_record(&[(0, 0, 0.7), (2, -1, 0.5)], &zs);
        let g = rec.grid;
        let i = {
            let (ix, iy, it) = g.nearest_bin(0.0, 0.0, 0.0);
            g.index(ix, iy, it)
        };
        for (k, v) in [1.0, 50.0, 2.0, 80.0, 3.0].into_iter().enumerate() {
            rec.intensity[k][i] = v;
        }
        let w = [
            GainWindow::around("hot", WindowKind::HotSpot, &g, 0.0, 0.0, 0.4),
            GainWindow::around("bg", WindowKind::Background, &g, 2.0 * g.dqx(), -g.domega(), 0.4),
        ];
        assert!(hotspot_gain(&rec, &w, 0.0).unwrap().flagged);
    }

    #[test]
    fn hotspot_prediction_is_symmetric_for_pplt() {
        let model = pplt();
        let t = 1.2f64.to_radians();
        let p = PumpConfig::new(-t, t, 0.0, C64::new(1.0, 0.0), C64::new(1.0, 0.0), 1e-3, 1e-3).unwrap();
        let h = predict_hotspots(&model, &p, 0.01, 1.0, 0.6).unwrap();
        let kp = model.carrier_pump_wavenumber().unwrap();
        assert!(h.shared.0.abs() < 1e-12);
        assert!((h.coupled_b.0 + kp * t).abs() < 1e-12 && (h.coupled_c.0 - kp * t).abs() < 1e-12);
        assert_eq!(h.coupled_b.1, -h.omega_shared);
        assert!((h.background[0].0 + h.background[1].0).abs() < 1e-12);
        assert!(h.background[0].0 < -0.5 * kp * t);
    }

    #[test]
    fn far_field_map_covers_window() {
        let rec = synthetic_record(&[(0, 0, 0.1)], &[1.0]);
        let m = rec.qx_omega_map(0);
        let per_axis = 2 * (16 / 3) + 1;
        assert_eq!(m.len(), per_axis * per_axis);
        assert!(m.windows(2).all(|w| (w[0].qx, w[0].omega) < (w[1].qx, w[1].omega)));
    }
}
