//! Undepleted-pump evolution of 3-mode (triplet) and 4-mode (quadruplet)
//! clusters: decoupling transforms, Bogoliubov solutions, the squeeze
//! eigenvalue decomposition and an independent linear-ODE integrator.
//!
//! Mode operators evolve as a(z) = U a(0) + V a†(0). All couplings follow
//! da_j/dz = e^{−iDz} Σ_k K_jk a_k† with K complex symmetric and D the common
//! phase mismatch.

use nalgebra::{DMatrix, Matrix2};
use num_complex::Complex64;
use serde::Serialize;

use crate::mode_solver::PumpConfig;
use crate::{Error, Result};

const I: Complex64 = Complex64::new(0.0, 1.0);

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Couplings of a cluster. `g1`, `g2` carry the pump phases ϕ₁, ϕ₂.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CouplingParams {
    pub g1: Complex64,
    pub g2: Complex64,
    /// Common phase mismatch D̄, μm⁻¹.
    pub delta: f64,
    /// Propagation length, μm.
    pub z: f64,
}

impl CouplingParams {
    pub fn new(g1: Complex64, g2: Complex64, delta: f64, z: f64) -> Result<Self> {
        let p = CouplingParams { g1, g2, delta, z };
        if !(p.g_bar() > 0.0) || !delta.is_finite() || !z.is_finite() {
            return Err(Error::InvalidParameter(
                "couplings need ḡ > 0 and finite D̄, z".into(),
            ));
        }
        Ok(p)
    }

    pub fn from_pump(pump: &PumpConfig, delta: f64, z: f64) -> Result<Self> {
        Self::new(pump.g1_complex(), pump.g2_complex(), delta, z)
    }

    pub fn g_bar(&self) -> f64 {
        self.g1.norm().hypot(self.g2.norm())
    }

    /// ρ = |g₂|/|g₁| (infinite when g₁ = 0).
    pub fn rho(&self) -> f64 {
        self.g2.norm() / self.g1.norm()
    }

    pub fn phi1(&self) -> f64 {
        self.g1.arg()
    }

    pub fn phi2(&self) -> f64 {
        self.g2.arg()
    }

    pub fn with_z(&self, z: f64) -> Self {
        CouplingParams { z, ..*self }
    }

    /// Triplet coupling matrix, mode order (a₀, a₁, a₂).
    pub fn triplet_matrix(&self) -> DMatrix<Complex64> {
        let z = Complex64::default();
        DMatrix::from_row_slice(3, 3, &[z, self.g1, self.g2, self.g1, z, z, self.g2, z, z])
    }

    /// Quadruplet coupling matrix, mode order (b_s, b_i, c_s, c_i).
    pub fn quadruplet_matrix(&self) -> DMatrix<Complex64> {
        let z = Complex64::default();
        let (g1, g2) = (self.g1, self.g2);
        DMatrix::from_row_slice(
            4,
            4,
            &[
                z, g1, z, g2, //
                g1, z, g2, z, //
                z, g2, z, z, //
                g2, z, z, z,
            ],
        )
    }
}

/// Linear input-output map a(z) = U a(0) + V a†(0).
#[derive(Debug, Clone, PartialEq)]
pub struct BogoliubovMap {
    pub u: DMatrix<Complex64>,
    pub v: DMatrix<Complex64>,
}

impl BogoliubovMap {
    pub fn identity(n: usize) -> Self {
        BogoliubovMap {
            u: DMatrix::identity(n, n),
            v: DMatrix::zeros(n, n),
        }
    }

    pub fn n_modes(&self) -> usize {
        self.u.nrows()
    }

    /// Passive map a → W a.
    pub fn passive(w: DMatrix<Complex64>) -> Self {
        let n = w.nrows();
        BogoliubovMap {
            u: w,
            v: DMatrix::zeros(n, n),
        }
    }

    /// `self` applied after `first`.
    pub fn after(&self, first: &BogoliubovMap) -> BogoliubovMap {
        BogoliubovMap {
            u: &self.u * &first.u + &self.v * first.v.conjugate(),
            v: &self.u * &first.v + &self.v * first.u.conjugate(),
        }
    }

    /// Real symplectic matrix acting on interleaved quadratures
    /// (x₁, y₁, x₂, y₂, …) with x = a + a†, y = −i(a − a†).
    pub fn symplectic(&self) -> DMatrix<f64> {
        let n = self.n_modes();
        let sum = &self.u + &self.v;
        let diff = &self.u - &self.v;
        DMatrix::from_fn(2 * n, 2 * n, |r, col| {
            let (j, k) = (r / 2, col / 2);
            match (r % 2, col % 2) {
                (0, 0) => sum[(j, k)].re,
                (0, 1) => -diff[(j, k)].im,
                (1, 0) => sum[(j, k)].im,
                _ => diff[(j, k)].re,
            }
        })
    }

    /// max of ‖UU† − VV† − 1‖ and ‖UVᵀ − VUᵀ‖ (zero for canonical maps).
    pub fn canonical_defect(&self) -> f64 {
        let n = self.n_modes();
        let a = &self.u * self.u.adjoint() - &self.v * self.v.adjoint() - DMatrix::identity(n, n);
        let b = &self.u * self.v.transpose() - &self.v * self.u.transpose();
        a.norm().max(b.norm())
    }
}

/// Two-mode squeezer with coupling λ (real or complex) and mismatch D:
/// a_s(z) = u a_s + v a_i†, a_i(z) = u a_i + v a_s†, with
/// u = e^{−iDz/2}[cosh sz + (iD/2s) sinh sz], v = e^{−iDz/2} λ sinh(sz)/s and
/// s = √(|λ|² − D²/4) (imaginary below threshold).
pub fn two_mode_squeezer(lambda: Complex64, delta: f64, z: f64) -> (Complex64, Complex64) {
    let s = Complex64::new(lambda.norm_sqr() - 0.25 * delta * delta, 0.0).sqrt();
    let sz = s * z;
    // sinh(sz)/s with its z → 0 and s → 0 limits
    let sinh_over_s = if sz.norm() < 1e-8 {
        c(z) * (c(1.0) + sz * sz / 6.0)
    } else {
        sz.sinh() / s
    };
    let phase = Complex64::from_polar(1.0, -0.5 * delta * z);
    let u = phase * (sz.cosh() + I * 0.5 * delta * sinh_over_s);
    let v = phase * lambda * sinh_over_s;
    (u, v)
}

/// Cosh and sinh coefficients of the shared/side-mode pair of a triplet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BogoliubovPair {
    pub cosh_coef: Complex64,
    pub sinh_coef: Complex64,
}

impl BogoliubovPair {
    pub fn symplectic_defect(&self) -> f64 {
        (self.cosh_coef.norm_sqr() - self.sinh_coef.norm_sqr() - 1.0).abs()
    }
}

/// â₀(z) = cosh(ḡz) â₀ + e^{iϕ₊} sinh(ḡz) â₊† for D̄ = 0; the rotating-frame
/// closed form of [`two_mode_squeezer`] otherwise.
pub fn bogoliubov(params: &CouplingParams) -> BogoliubovPair {
    let phase = 0.5 * (params.phi1() + params.phi2());
    let lambda = Complex64::from_polar(params.g_bar(), phase);
    let (u, v) = two_mode_squeezer(lambda, params.delta, params.z);
    BogoliubovPair {
        cosh_coef: u,
        sinh_coef: v,
    }
}

/// Side-mode transform (â₊, â₋) = M (â₁, â₂) of a triplet and its
/// beam-splitter factorisation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripletDecoupling {
    /// [[g₁*/ḡ*, g₂*/ḡ*], [−g₂/ḡ, g₁/ḡ]], ḡ carrying the phase (ϕ₁+ϕ₂)/2.
    pub matrix: Matrix2<Complex64>,
    /// Beam-splitter transmission |g₁|/ḡ.
    pub t: f64,
    /// Beam-splitter reflection −|g₂|/ḡ.
    pub r: f64,
    pub phi_minus: f64,
}

impl TripletDecoupling {
    /// diag(e^{iϕ₋}, e^{−iϕ₋})·[[t, r], [−r, t]]: equals the inverse of `matrix`.
    pub fn inverse_factored(&self) -> Matrix2<Complex64> {
        let phases = Matrix2::new(
            Complex64::from_polar(1.0, self.phi_minus),
            c(0.0),
            c(0.0),
            Complex64::from_polar(1.0, -self.phi_minus),
        );
        let splitter = Matrix2::new(c(self.t), c(self.r), c(-self.r), c(self.t));
        phases * splitter
    }
}

/// Decoupling of a triplet from the pump couplings. With equal χ this is the
/// amplitude form α_j/ᾱ.
pub fn triplet_decouple(pump: &PumpConfig) -> Result<TripletDecoupling> {
    triplet_decouple_couplings(pump.g1_complex(), pump.g2_complex())
}

pub fn triplet_decouple_couplings(g1: Complex64, g2: Complex64) -> Result<TripletDecoupling> {
    let norm = g1.norm().hypot(g2.norm());
    if !(norm > 0.0) {
        return Err(Error::InvalidParameter("both pump amplitudes vanish".into()));
    }
    let gbar = Complex64::from_polar(norm, 0.5 * (g1.arg() + g2.arg()));
    let matrix = Matrix2::new(
        g1.conj() / gbar.conj(),
        g2.conj() / gbar.conj(),
        -g2 / gbar,
        g1 / gbar,
    );
    Ok(TripletDecoupling {
        matrix,
        t: g1.norm() / norm,
        r: -g2.norm() / norm,
        phi_minus: 0.5 * (g1.arg() - g2.arg()),
    })
}

fn embed2(m: &Matrix2<Complex64>) -> DMatrix<Complex64> {
    DMatrix::from_fn(2, 2, |r, c| m[(r, c)])
}

/// Closed-form triplet map, mode order (a₀, a₁, a₂): decouple, squeeze
/// (a₀, a₊) with ḡ, leave a₋ untouched, recouple.
pub fn triplet_map(params: &CouplingParams) -> Result<BogoliubovMap> {
    let dec = triplet_decouple_couplings(params.g1, params.g2)?;
    let m = embed2(&dec.matrix);
    let m_inv = m.adjoint();
    // basis change: (a₀, a₊, a₋) = T (a₀, a₁, a₂)
    let mut t = DMatrix::<Complex64>::identity(3, 3);
    t.view_mut((1, 1), (2, 2)).copy_from(&m);
    let mut t_inv = DMatrix::<Complex64>::identity(3, 3);
    t_inv.view_mut((1, 1), (2, 2)).copy_from(&m_inv);

    let pair = bogoliubov(params);
    // a₋ keeps its mismatch phase e^{−iDz/2}·e^{iDz/2} = 1 in the lab frame
    let mut u = DMatrix::<Complex64>::zeros(3, 3);
    let mut v = DMatrix::<Complex64>::zeros(3, 3);
    u[(0, 0)] = pair.cosh_coef;
    u[(1, 1)] = pair.cosh_coef;
    u[(2, 2)] = c(1.0);
    v[(0, 1)] = pair.sinh_coef;
    v[(1, 0)] = pair.sinh_coef;
    let core = BogoliubovMap { u, v };
    Ok(BogoliubovMap::passive(t_inv).after(&core.after(&BogoliubovMap::passive(t))))
}

pub fn triplet_evolve(params: &CouplingParams, cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    apply_to_covariance(&triplet_map(params)?, cov)
}

/// Quadruplet decomposition into two independent EPR processes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadDecomposition {
    /// Λσ = |g₁| f₊(ρ).
    pub lambda_sigma: f64,
    /// Λδ = |g₁| f₋(ρ) ≤ 0.
    pub lambda_delta: f64,
    /// cos of the mixing angle, f₊/√(ρ² + f₊²).
    pub mix_cos: f64,
    /// sin of the mixing angle, −ρ/√(ρ² + f₊²).
    pub mix_sin: f64,
    /// Output phase of the b modes, ϕ₁/2.
    pub phase_b: f64,
    /// Output phase of the c modes, ϕ₂/2 − ϕ₋.
    pub phase_c: f64,
}

/// f±(ρ) = (1 ± √(1 + 4ρ²))/2.
pub fn f_pm(rho: f64) -> (f64, f64) {
    let r = (1.0 + 4.0 * rho * rho).sqrt();
    (0.5 * (1.0 + r), 0.5 * (1.0 - r))
}

pub fn quad_decompose(params: &CouplingParams) -> Result<QuadDecomposition> {
    let (a1, a2) = (params.g1.norm(), params.g2.norm());
    if !(a1.hypot(a2) > 0.0) {
        return Err(Error::InvalidParameter("both couplings vanish".into()));
    }
    // written with |g₁|, |g₂| directly so g₁ = 0 needs no special case
    let root = (a1 * a1 + 4.0 * a2 * a2).sqrt();
    let lambda_sigma = 0.5 * (a1 + root);
    // λσλδ = −|g₂|², evaluated without cancellation
    let lambda_delta = -a2 * a2 / lambda_sigma;
    let norm = lambda_sigma.hypot(a2);
    let phi1 = params.phi1();
    let phi2 = params.phi2();
    let phi_minus = 0.5 * (phi1 - phi2);
    Ok(QuadDecomposition {
        lambda_sigma,
        lambda_delta,
        mix_cos: lambda_sigma / norm,
        mix_sin: -a2 / norm,
        phase_b: 0.5 * phi1,
        phase_c: 0.5 * phi2 - phi_minus,
    })
}

impl QuadDecomposition {
    /// U = diag(e^{iϕ_b}, e^{iϕ_c})·[[cos, sin], [−sin, cos]] mapping (σ, δ) to (b, c).
    pub fn unitary(&self) -> Matrix2<Complex64> {
        let p = Matrix2::new(
            Complex64::from_polar(1.0, self.phase_b),
            c(0.0),
            c(0.0),
            Complex64::from_polar(1.0, self.phase_c),
        );
        let r = Matrix2::new(
            c(self.mix_cos),
            c(self.mix_sin),
            c(-self.mix_sin),
            c(self.mix_cos),
        );
        p * r
    }

    /// Signal–idler coupling in the (σ, δ) basis: U† M U* with
    /// M = [[g₁, g₂], [g₂, 0]]. Diagonal (Λσ, Λδ) when the decomposition holds.
    pub fn transformed_coupling(&self, params: &CouplingParams) -> Matrix2<Complex64> {
        let m = Matrix2::new(params.g1, params.g2, params.g2, c(0.0));
        let u = self.unitary();
        u.adjoint() * m * u.conjugate()
    }

    /// Frobenius norm of the off-diagonal part of [`Self::transformed_coupling`]
    /// (the off-block part of the 4-mode coupling in the σ/δ basis).
    pub fn block_residual(&self, params: &CouplingParams) -> f64 {
        let t = self.transformed_coupling(params);
        (t[(0, 1)].norm_sqr() + t[(1, 0)].norm_sqr()).sqrt()
    }
}

/// Closed-form quadruplet map, order (b_s, b_i, c_s, c_i).
pub fn quadruplet_map(params: &CouplingParams) -> Result<BogoliubovMap> {
    let dec = quad_decompose(params)?;
    let u2 = dec.unitary();
    // (b_j, c_j) = U (σ_j, δ_j): lift to 4 modes ordered (b_s, b_i, c_s, c_i)
    // from the internal order (σ_s, σ_i, δ_s, δ_i)
    let mut w = DMatrix::<Complex64>::zeros(4, 4);
    for side in 0..2 {
        for r in 0..2 {
            for col in 0..2 {
                w[(2 * r + side, 2 * col + side)] = u2[(r, col)];
            }
        }
    }
    let mut u = DMatrix::<Complex64>::zeros(4, 4);
    let mut v = DMatrix::<Complex64>::zeros(4, 4);
    for (block, lambda) in [(0usize, dec.lambda_sigma), (2, dec.lambda_delta)] {
        let (cu, cv) = two_mode_squeezer(c(lambda), params.delta, params.z);
        u[(block, block)] = cu;
        u[(block + 1, block + 1)] = cu;
        v[(block, block + 1)] = cv;
        v[(block + 1, block)] = cv;
    }
    let core = BogoliubovMap { u, v };
    let to_modes = BogoliubovMap::passive(w.clone());
    let from_modes = BogoliubovMap::passive(w.adjoint());
    Ok(to_modes.after(&core.after(&from_modes)))
}

pub fn quad_evolve(params: &CouplingParams, cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    apply_to_covariance(&quadruplet_map(params)?, cov)
}

fn apply_to_covariance(map: &BogoliubovMap, cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = 2 * map.n_modes();
    if cov.nrows() != n || cov.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: cov.nrows(),
        });
    }
    let s = map.symplectic();
    Ok(&s * cov * s.transpose())
}

/// First-order two-photon amplitudes of the quadruplet state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairAmplitudes {
    pub bs_bi: Complex64,
    pub bs_ci: Complex64,
    pub cs_bi: Complex64,
    pub cs_ci: Complex64,
}

pub fn perturbative_pair_amplitudes(params: &CouplingParams) -> PairAmplitudes {
    PairAmplitudes {
        bs_bi: params.g1 * params.z,
        bs_ci: params.g2 * params.z,
        cs_bi: params.g2 * params.z,
        cs_ci: c(0.0),
    }
}

/// u_p(x) = (α₁e^{iQ₁x} + α₂e^{−iQ₁x})/ᾱ and
/// u_p⊥(x) = (−α₂*e^{iQ₁x} + α₁*e^{−iQ₁x})/ᾱ*, for symmetric tilts Q₂ = −Q₁.
pub fn near_field_profiles(
    pump: &PumpConfig,
    q1: f64,
    x_grid: &[f64],
) -> (Vec<Complex64>, Vec<Complex64>) {
    let (a1, a2) = (pump.alpha1, pump.alpha2);
    let abar = pump.alpha_bar();
    let up = x_grid
        .iter()
        .map(|&x| {
            let e = Complex64::from_polar(1.0, q1 * x);
            (a1 * e + a2 * e.conj()) / abar
        })
        .collect();
    let perp = x_grid
        .iter()
        .map(|&x| {
            let e = Complex64::from_polar(1.0, q1 * x);
            (-a2.conj() * e + a1.conj() * e.conj()) / abar.conj()
        })
        .collect();
    (up, perp)
}

/// Caller-owned scratch space of the RK4 integrator.
#[derive(Debug, Clone)]
pub struct OdeWorkspace {
    k: [(DMatrix<Complex64>, DMatrix<Complex64>); 4],
    stage: (DMatrix<Complex64>, DMatrix<Complex64>),
}

impl OdeWorkspace {
    pub fn new(n: usize) -> Self {
        let z = || (DMatrix::zeros(n, n), DMatrix::zeros(n, n));
        OdeWorkspace {
            k: [z(), z(), z(), z()],
            stage: z(),
        }
    }
}

/// Fixed-step RK4 integration of dU/dz = e^{−iDz} K V*, dV/dz = e^{−iDz} K U*
/// from U = 1, V = 0: the lab-frame equations of motion, used as an
/// independent check of the closed forms.
pub fn integrate_linear_ode(
    coupling: &DMatrix<Complex64>,
    delta: f64,
    z: f64,
    steps: usize,
    ws: &mut OdeWorkspace,
) -> Result<BogoliubovMap> {
    let n = coupling.nrows();
    if ws.stage.0.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: ws.stage.0.nrows(),
        });
    }
    let mut u = DMatrix::<Complex64>::identity(n, n);
    let mut v = DMatrix::<Complex64>::zeros(n, n);
    let h = z / steps as f64;
    let rhs = |zz: f64, u: &DMatrix<Complex64>, v: &DMatrix<Complex64>, out: &mut (DMatrix<Complex64>, DMatrix<Complex64>)| {
        let ph = Complex64::from_polar(1.0, -delta * zz);
        let k = coupling * ph;
        k.mul_to(&v.conjugate(), &mut out.0);
        k.mul_to(&u.conjugate(), &mut out.1);
    };
    for step in 0..steps {
        let z0 = step as f64 * h;
        let [k1, k2, k3, k4] = &mut ws.k;
        rhs(z0, &u, &v, k1);
        ws.stage.0 = &u + &k1.0 * c(0.5 * h);
        ws.stage.1 = &v + &k1.1 * c(0.5 * h);
        rhs(z0 + 0.5 * h, &ws.stage.0, &ws.stage.1, k2);
        ws.stage.0 = &u + &k2.0 * c(0.5 * h);
        ws.stage.1 = &v + &k2.1 * c(0.5 * h);
        rhs(z0 + 0.5 * h, &ws.stage.0, &ws.stage.1, k3);
        ws.stage.0 = &u + &k3.0 * c(h);
        ws.stage.1 = &v + &k3.1 * c(h);
        rhs(z0 + h, &ws.stage.0, &ws.stage.1, k4);
        u += (&k1.0 + &k2.0 * c(2.0) + &k3.0 * c(2.0) + &k4.0) * c(h / 6.0);
        v += (&k1.1 + &k2.1 * c(2.0) + &k3.1 * c(2.0) + &k4.1) * c(h / 6.0);
    }
    Ok(BogoliubovMap { u, v })
}

/// Relative distance between two maps, max(‖ΔU‖, ‖ΔV‖)/max(‖U‖, ‖V‖, 1).
pub fn map_distance(a: &BogoliubovMap, b: &BogoliubovMap) -> f64 {
    let scale = a.u.norm().max(a.v.norm()).max(1.0);
    (&a.u - &b.u).norm().max((&a.v - &b.v).norm()) / scale
}
