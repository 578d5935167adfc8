//! Gaussian states in the quadrature representation and the quadripartite
//! entanglement witnesses.
//!
//! Quadratures are x = a + a†, y = −i(a − a†), so [x, y] = 2i and the vacuum
//! has unit variance in every quadrature (covariance = identity). Vectors are
//! interleaved: (x₁, y₁, x₂, y₂, …).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::Serialize;

use crate::mode_dynamics::{BogoliubovMap, QuadDecomposition};
use crate::{Error, Result};

/// Tolerance on physicality and symmetry checks.
pub const PHYSICAL_TOL: f64 = 1e-10;

/// J = ⊕ [[0, 1], [−1, 0]].
pub fn symplectic_form(n_modes: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * n_modes, 2 * n_modes);
    for k in 0..n_modes {
        j[(2 * k, 2 * k + 1)] = 1.0;
        j[(2 * k + 1, 2 * k)] = -1.0;
    }
    j
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    pub n_modes: usize,
    pub covariance: DMatrix<f64>,
    pub mean: DVector<f64>,
}

impl GaussianState {
    pub fn vacuum(n_modes: usize) -> Self {
        GaussianState {
            n_modes,
            covariance: DMatrix::identity(2 * n_modes, 2 * n_modes),
            mean: DVector::zeros(2 * n_modes),
        }
    }

    pub fn new(covariance: DMatrix<f64>, mean: DVector<f64>) -> Result<Self> {
        let n = covariance.nrows();
        if n % 2 != 0 || covariance.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n + n % 2,
                found: covariance.ncols(),
            });
        }
        if mean.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: mean.len(),
            });
        }
        let state = GaussianState {
            n_modes: n / 2,
            covariance,
            mean,
        };
        state.check_physical()?;
        Ok(state)
    }

    pub fn symmetry_defect(&self) -> f64 {
        (&self.covariance - self.covariance.transpose()).amax()
    }

    /// Symplectic eigenvalues ν_k (each listed once), from the eigenvalues
    /// ν² of −(σ^{1/2} J σ^{1/2})².
    pub fn symplectic_eigenvalues(&self) -> Result<Vec<f64>> {
        let eig = SymmetricEigen::new(0.5 * (&self.covariance + self.covariance.transpose()));
        let min = eig.eigenvalues.min();
        if !(min > 0.0) {
            return Err(Error::Unphysical { min_eigenvalue: min });
        }
        let sqrt = &eig.eigenvectors
            * DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt))
            * eig.eigenvectors.transpose();
        let a = &sqrt * symplectic_form(self.n_modes) * &sqrt;
        let m = -(&a * &a);
        let mut nu2: Vec<f64> = SymmetricEigen::new(0.5 * (&m + m.transpose()))
            .eigenvalues
            .iter()
            .copied()
            .collect();
        nu2.sort_by(f64::total_cmp);
        Ok(nu2.chunks(2).map(|p| (0.5 * (p[0] + p[1])).max(0.0).sqrt()).collect())
    }

    pub fn min_symplectic_eigenvalue(&self) -> Result<f64> {
        Ok(self
            .symplectic_eigenvalues()?
            .into_iter()
            .fold(f64::INFINITY, f64::min))
    }

    /// σ + iJ ⪰ 0, i.e. every symplectic eigenvalue ≥ 1.
    pub fn check_physical(&self) -> Result<()> {
        if self.symmetry_defect() > PHYSICAL_TOL * self.covariance.amax().max(1.0) {
            return Err(Error::InvalidParameter("covariance matrix is not symmetric".into()));
        }
        let nu = self.min_symplectic_eigenvalue()?;
        if nu < 1.0 - PHYSICAL_TOL {
            return Err(Error::Unphysical { min_eigenvalue: nu });
        }
        Ok(())
    }

    /// det σ (1 for pure states in this normalisation).
    pub fn purity_determinant(&self) -> f64 {
        self.covariance.determinant()
    }

    pub fn apply_symplectic(&self, s: &DMatrix<f64>) -> Result<GaussianState> {
        if s.nrows() != 2 * self.n_modes {
            return Err(Error::DimensionMismatch {
                expected: 2 * self.n_modes,
                found: s.nrows(),
            });
        }
        Ok(GaussianState {
            n_modes: self.n_modes,
            covariance: s * &self.covariance * s.transpose(),
            mean: s * &self.mean,
        })
    }

    pub fn apply_map(&self, map: &BogoliubovMap) -> Result<GaussianState> {
        self.apply_symplectic(&map.symplectic())
    }

    pub fn variance(&self, obs: &LinearObservable) -> Result<f64> {
        self.check_len(obs)?;
        Ok((obs.coefficients.transpose() * &self.covariance * &obs.coefficients)[(0, 0)])
    }

    /// ⟨a_j a_k⟩ − ⟨a_j⟩⟨a_k⟩ from the covariance.
    pub fn anomalous_moment(&self, j: usize, k: usize) -> Complex64 {
        let s = &self.covariance;
        let (xj, yj, xk, yk) = (2 * j, 2 * j + 1, 2 * k, 2 * k + 1);
        Complex64::new(s[(xj, xk)] - s[(yj, yk)], s[(xj, yk)] + s[(yj, xk)]) * 0.25
    }

    fn check_len(&self, obs: &LinearObservable) -> Result<()> {
        if obs.coefficients.len() != 2 * self.n_modes {
            return Err(Error::DimensionMismatch {
                expected: 2 * self.n_modes,
                found: obs.coefficients.len(),
            });
        }
        Ok(())
    }
}

/// Quadratic generator da/dz = A a + K a† with A anti-Hermitian (passive
/// part) and K complex symmetric (pair creation).
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticGenerator {
    pub passive: DMatrix<Complex64>,
    pub pairing: DMatrix<Complex64>,
}

impl QuadraticGenerator {
    pub fn pairing_only(pairing: DMatrix<Complex64>) -> Self {
        let n = pairing.nrows();
        QuadraticGenerator {
            passive: DMatrix::zeros(n, n),
            pairing,
        }
    }

    /// Real generator G with dR/dz = G R on interleaved quadratures.
    pub fn real_generator(&self) -> DMatrix<f64> {
        BogoliubovMap {
            u: self.passive.clone(),
            v: self.pairing.clone(),
        }
        .symplectic()
    }
}

/// S = exp(G z) applied to the state.
pub fn evolve_state(state: &GaussianState, generator: &QuadraticGenerator, z: f64) -> Result<GaussianState> {
    state.check_physical()?;
    if generator.pairing.nrows() != state.n_modes {
        return Err(Error::DimensionMismatch {
            expected: state.n_modes,
            found: generator.pairing.nrows(),
        });
    }
    let s = (generator.real_generator() * z).exp();
    state.apply_symplectic(&s)
}

/// Real linear combination Σ cᵢ Rᵢ of quadratures.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearObservable {
    pub coefficients: DVector<f64>,
}

impl LinearObservable {
    pub fn zero(n_modes: usize) -> Self {
        LinearObservable {
            coefficients: DVector::zeros(2 * n_modes),
        }
    }

    /// Adds w·X_φ(mode), X_φ = a e^{−iφ} + a† e^{iφ} = x cos φ + y sin φ.
    pub fn add_x(mut self, mode: usize, phase: f64, weight: f64) -> Self {
        self.coefficients[2 * mode] += weight * phase.cos();
        self.coefficients[2 * mode + 1] += weight * phase.sin();
        self
    }

    /// Adds w·Y_φ(mode), the quadrature conjugate to X_φ: −x sin φ + y cos φ.
    pub fn add_y(mut self, mode: usize, phase: f64, weight: f64) -> Self {
        self.coefficients[2 * mode] -= weight * phase.sin();
        self.coefficients[2 * mode + 1] += weight * phase.cos();
        self
    }
}

/// Matrix of c such that [A_m, A_n] = i·c_mn.
pub fn pairwise_commutators(observables: &[LinearObservable]) -> Result<DMatrix<f64>> {
    let Some(first) = observables.first() else {
        return Ok(DMatrix::zeros(0, 0));
    };
    let len = first.coefficients.len();
    if len % 2 != 0 {
        return Err(Error::DimensionMismatch {
            expected: len + 1,
            found: len,
        });
    }
    for o in observables {
        if o.coefficients.len() != len {
            return Err(Error::DimensionMismatch {
                expected: len,
                found: o.coefficients.len(),
            });
        }
    }
    let j = symplectic_form(len / 2);
    let n = observables.len();
    Ok(DMatrix::from_fn(n, n, |a, b| {
        2.0 * (observables[a].coefficients.transpose() * &j * &observables[b].coefficients)[(0, 0)]
    }))
}

/// The four witness observables f_I … f_IV of a quadruplet ordered
/// (b_s, b_i, c_s, c_i), with b quadratures referenced to ϕ_b and c
/// quadratures to ϕ_c.
pub fn witness_observables(dec: &QuadDecomposition) -> [LinearObservable; 4] {
    let (cs, sn) = (dec.mix_cos, dec.mix_sin);
    let (pb, pc) = (dec.phase_b, dec.phase_c);
    let z = || LinearObservable::zero(4);
    [
        // cos θ (X_bs − X_bi) − sin θ (X_cs − X_ci)
        z().add_x(0, pb, cs).add_x(1, pb, -cs).add_x(2, pc, -sn).add_x(3, pc, sn),
        // sin θ (X_bs + X_bi) + cos θ (X_cs + X_ci)
        z().add_x(0, pb, sn).add_x(1, pb, sn).add_x(2, pc, cs).add_x(3, pc, cs),
        // cos θ (Y_bs + Y_bi) − sin θ (Y_cs + Y_ci)
        z().add_y(0, pb, cs).add_y(1, pb, cs).add_y(2, pc, -sn).add_y(3, pc, -sn),
        // sin θ (Y_bs − Y_bi) + cos θ (Y_cs − Y_ci)
        z().add_y(0, pb, sn).add_y(1, pb, -sn).add_y(2, pc, cs).add_y(3, pc, -cs),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WitnessReport {
    pub z: f64,
    pub var_f1: f64,
    pub var_f2: f64,
    pub var_f3: f64,
    pub var_f4: f64,
    /// 2e^{−2Λσz} (f_I, f_III) and 2e^{−2|Λδ|z} (f_II, f_IV) on vacuum input.
    pub reference_sigma: f64,
    pub reference_delta: f64,
}

pub fn witness_variances(state: &GaussianState, dec: &QuadDecomposition, z: f64) -> Result<WitnessReport> {
    if state.n_modes != 4 {
        return Err(Error::DimensionMismatch {
            expected: 4,
            found: state.n_modes,
        });
    }
    let obs = witness_observables(dec);
    let v: Vec<f64> = obs.iter().map(|o| state.variance(o)).collect::<Result<_>>()?;
    Ok(WitnessReport {
        z,
        var_f1: v[0],
        var_f2: v[1],
        var_f3: v[2],
        var_f4: v[3],
        reference_sigma: 2.0 * (-2.0 * dec.lambda_sigma * z).exp(),
        reference_delta: 2.0 * (-2.0 * dec.lambda_delta.abs() * z).exp(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mode_dynamics::{quad_decompose, quadruplet_map, triplet_map, CouplingParams};
    use proptest::prelude::*;

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    #[test]
    fn vacuum_is_physical_and_pure() {
        let v = GaussianState::vacuum(3);
        assert!((v.min_symplectic_eigenvalue().unwrap() - 1.0).abs() < 1e-12);
        assert!((v.purity_determinant() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn unphysical_state_rejected() {
        let mut cov = DMatrix::identity(2, 2);
        cov[(0, 0)] = 0.5;
        assert!(matches!(
            GaussianState::new(cov, DVector::zeros(2)),
            Err(Error::Unphysical { .. })
        ));
        let mut asym = DMatrix::identity(2, 2);
        asym[(0, 1)] = 0.3;
        assert!(GaussianState::new(asym, DVector::zeros(2)).is_err());
    }

    #[test]
    fn thermal_state_eigenvalue() {
        let cov = DMatrix::identity(2, 2) * 3.0;
        let s = GaussianState::new(cov, DVector::zeros(2)).unwrap();
        assert!((s.min_symplectic_eigenvalue().unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_generator_keeps_state() {
        let mut cov = DMatrix::identity(4, 4) * 2.0;
        cov[(0, 2)] = 0.5;
        cov[(2, 0)] = 0.5;
        let state = GaussianState::new(cov, DVector::zeros(4)).unwrap();
        let g = QuadraticGenerator::pairing_only(DMatrix::zeros(2, 2));
        let out = evolve_state(&state, &g, 5.0).unwrap();
        assert!((out.covariance - state.covariance).amax() < 1e-14);
    }

    #[test]
    fn two_mode_squeezer_epr_variance() {
        let g = 0.7;
        let mut k = DMatrix::zeros(2, 2);
        k[(0, 1)] = c(g);
        k[(1, 0)] = c(g);
        let gen = QuadraticGenerator::pairing_only(k);
        for z in [0.0, 0.5, 1.0, 2.0] {
            let s = evolve_state(&GaussianState::vacuum(2), &gen, z).unwrap();
            let diff = LinearObservable::zero(2).add_x(0, 0.0, 1.0).add_x(1, 0.0, -1.0);
            let v = s.variance(&diff).unwrap();
            let expected = 2.0 * (-2.0 * g * z).exp();
            assert!((v - expected).abs() < 1e-10 * expected, "{v} {expected}");
        }
    }

    #[test]
    fn triplet_minus_mode_stays_vacuum() {
        let p = CouplingParams::new(c(0.6), Complex64::from_polar(0.8, 0.9), 0.0, 2.0).unwrap();
        let k = p.triplet_matrix();
        let s = evolve_state(&GaussianState::vacuum(3), &QuadraticGenerator::pairing_only(k), p.z).unwrap();
        let dec = crate::mode_dynamics::triplet_decouple_couplings(p.g1, p.g2).unwrap();
        // X and Y of a₋ = m₁ a₁ + m₂ a₂
        let quad = |phase: f64| {
            let mut o = LinearObservable::zero(3);
            for (mode, m) in [(1usize, dec.matrix[(1, 0)]), (2, dec.matrix[(1, 1)])] {
                // a₋ e^{−iφ} + h.c. = Σ |m| (x cos(φ − arg m) + y sin(φ − arg m))
                o = o.add_x(mode, phase - m.arg(), m.norm());
            }
            o
        };
        for phase in [0.0, 0.7, std::f64::consts::FRAC_PI_2] {
            assert!((s.variance(&quad(phase)).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn symplectic_exponential_matches_closed_form() {
        let p = CouplingParams::new(Complex64::from_polar(0.6, 0.3), Complex64::from_polar(0.9, -1.1), 0.0, 1.7).unwrap();
        let gen = QuadraticGenerator::pairing_only(p.quadruplet_matrix());
        let a = evolve_state(&GaussianState::vacuum(4), &gen, p.z).unwrap();
        let b = GaussianState::vacuum(4).apply_map(&quadruplet_map(&p).unwrap()).unwrap();
        assert!((a.covariance - &b.covariance).amax() < 1e-9 * b.covariance.amax());
    }

    #[test]
    fn golden_ratio_witness_value() {
        let p = CouplingParams::new(c(1.0), c(1.0), 0.0, 1.0).unwrap();
        let dec = quad_decompose(&p).unwrap();
        let s = GaussianState::vacuum(4).apply_map(&quadruplet_map(&p).unwrap()).unwrap();
        let w = witness_variances(&s, &dec, p.z).unwrap();
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((w.var_f1 - 2.0 * (-2.0 * phi).exp()).abs() < 1e-10);
        assert!((w.var_f1 - 0.078_64).abs() < 1e-5);
    }

    #[test]
    fn witnesses_at_entrance_are_two() {
        let p = CouplingParams::new(c(0.4), c(0.9), 0.0, 0.0).unwrap();
        let dec = quad_decompose(&p).unwrap();
        let w = witness_variances(&GaussianState::vacuum(4), &dec, 0.0).unwrap();
        for v in [w.var_f1, w.var_f2, w.var_f3, w.var_f4] {
            assert!((v - 2.0).abs() < 1e-14);
        }
        assert!(witness_variances(&GaussianState::vacuum(3), &dec, 0.0).is_err());
    }

    #[test]
    fn basic_commutators() {
        let xb = LinearObservable::zero(4).add_x(0, 0.0, 1.0);
        let yb = LinearObservable::zero(4).add_y(0, 0.0, 1.0);
        let xci = LinearObservable::zero(4).add_x(3, 0.0, 1.0);
        let c = pairwise_commutators(&[xb, yb, xci]).unwrap();
        assert_eq!(c[(0, 1)], 2.0);
        assert_eq!(c[(1, 0)], -2.0);
        assert_eq!(c[(0, 2)], 0.0);
    }

    #[test]
    fn anomalous_moment_of_squeezer() {
        let p = CouplingParams::new(Complex64::from_polar(0.5, 0.8), c(0.0), 0.0, 1.2).unwrap();
        let map = quadruplet_map(&p).unwrap();
        let s = GaussianState::vacuum(4).apply_map(&map).unwrap();
        let expected = (&map.u * map.v.transpose())[(0, 1)];
        assert!((s.anomalous_moment(0, 1) - expected).norm() < 1e-12);
    }

    proptest! {
        #[test]
        fn witnesses_commute(rho in 0.01f64..20.0, p1 in -3.0f64..3.0, p2 in -3.0f64..3.0) {
            let p = CouplingParams::new(Complex64::from_polar(0.5, p1), Complex64::from_polar(0.5 * rho, p2), 0.0, 1.0).unwrap();
            let obs = witness_observables(&quad_decompose(&p).unwrap());
            let c = pairwise_commutators(&obs).unwrap();
            prop_assert!(c.amax() < 1e-12);
        }

        #[test]
        fn evolution_preserves_physicality_and_purity(
            g1 in 0.0f64..1.0, g2 in 0.05f64..1.0, p1 in -3.0f64..3.0, p2 in -3.0f64..3.0,
            delta in -0.5f64..0.5, gz in 0.0f64..3.0,
        ) {
            let p = CouplingParams::new(Complex64::from_polar(g1, p1), Complex64::from_polar(g2, p2), delta, 1.0).unwrap();
            let p = p.with_z(gz / p.g_bar());
            for (n, map) in [(3, triplet_map(&p).unwrap()), (4, quadruplet_map(&p).unwrap())] {
                let s = GaussianState::vacuum(n).apply_map(&map).unwrap();
                prop_assert!(s.min_symplectic_eigenvalue().unwrap() >= 1.0 - 1e-10 * s.covariance.amax());
                prop_assert!((s.purity_determinant() - 1.0).abs() < 1e-8);
                prop_assert!(s.symmetry_defect() < 1e-12 * s.covariance.amax());
            }
        }

        #[test]
        fn witness_decay(rho in 0.05f64..10.0, p1 in -3.0f64..3.0, p2 in -3.0f64..3.0, gz in 0.0f64..3.0) {
            let p = CouplingParams::new(Complex64::from_polar(0.5, p1), Complex64::from_polar(0.5 * rho, p2), 0.0, 1.0).unwrap();
            let p = p.with_z(gz / p.g_bar());
            let dec = quad_decompose(&p).unwrap();
            let s = GaussianState::vacuum(4).apply_map(&quadruplet_map(&p).unwrap()).unwrap();
            let w = witness_variances(&s, &dec, p.z).unwrap();
            for (v, r) in [(w.var_f1, w.reference_sigma), (w.var_f3, w.reference_sigma),
                           (w.var_f2, w.reference_delta), (w.var_f4, w.reference_delta)] {
                prop_assert!((v - r).abs() <= 1e-8 * r, "{} vs {}", v, r);
            }
        }
    }
}
