//! Truncated spectral representation of `H = L²(0,1)` in the Dirichlet
//! eigenbasis `e_k(ξ) = √2 sin(kπξ)`.
//!
//! Two eigenvalue families are stored separately: `a_k = (kπ)²` for `−A` and
//! `q_k = 1/(2a_k)` for the covariance `Q = −½A⁻¹` of the reference Gaussian
//! measure γ.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{PI, SQRT_2};
use core::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potential::ConvexPotential;
use crate::rng::{self, Stream, StreamKey};

/// Coefficients `x_k = ⟨x, e_k⟩`, `k = 1..N` stored at index `k − 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoeffVec(pub Vec<f64>);

/// Values at the collocation points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction(pub Vec<f64>);

impl CoeffVec {
    pub fn zeros(n: usize) -> Self {
        CoeffVec(vec![0.0; n])
    }

    /// The basis vector `e_{k+1}` (0-based index `k`).
    pub fn unit(n: usize, k: usize) -> Self {
        let mut v = Self::zeros(n);
        v.0[k] = 1.0;
        v
    }

    pub fn dot(&self, other: &CoeffVec) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.dot(self))
    }

    pub fn dist(&self, other: &CoeffVec) -> f64 {
        libm::sqrt(self.0.iter().zip(&other.0).map(|(a, b)| (a - b) * (a - b)).sum())
    }

    /// `self += c · other`
    pub fn axpy(&mut self, c: f64, other: &CoeffVec) {
        for (s, o) in self.0.iter_mut().zip(&other.0) {
            *s += c * o;
        }
    }

    pub fn scaled(&self, c: f64) -> CoeffVec {
        CoeffVec(self.0.iter().map(|v| c * v).collect())
    }

    pub fn sub(&self, other: &CoeffVec) -> CoeffVec {
        CoeffVec(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn add(&self, other: &CoeffVec) -> CoeffVec {
        CoeffVec(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Deref for CoeffVec {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for CoeffVec {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl Deref for GridFunction {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Serializable description of a model; enough to rebuild it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub n_modes: usize,
    pub grid_points: usize,
    pub eigenvalue_family: alloc::string::String,
}

pub const DIRICHLET_FAMILY: &str = "dirichlet-laplacian";

#[derive(Debug, Clone)]
pub struct SpectralModel {
    n_modes: usize,
    grid_points: usize,
    a: Vec<f64>,
    q: Vec<f64>,
    grid: Vec<f64>,
    /// Uniform quadrature weight `1/(M+1)`.
    weight: f64,
    /// Row-major `M × N`: `basis[j·N + k] = e_{k+1}(ξ_j)`.
    basis: Vec<f64>,
}

impl SpectralModel {
    /// Dirichlet Laplacian on (0,1) with `n_modes` modes and `grid_points`
    /// interior collocation points `ξ_j = j/(M+1)`.
    ///
    /// The discrete sine transform is exactly orthogonal on this grid, so
    /// `analyze ∘ synth` is the identity up to rounding.
    pub fn dirichlet(n_modes: usize, grid_points: usize) -> Result<Self> {
        if n_modes == 0 {
            return Err(Error::Config("n_modes must be at least 1".into()));
        }
        if grid_points < 2 * n_modes {
            return Err(Error::Config(alloc::format!(
                "grid_points = {grid_points} must be at least 2·n_modes = {}",
                2 * n_modes
            )));
        }
        let a: Vec<f64> = (1..=n_modes).map(|k| (k as f64 * PI) * (k as f64 * PI)).collect();
        let q = a.iter().map(|ak| 1.0 / (2.0 * ak)).collect();
        let h = 1.0 / (grid_points + 1) as f64;
        let grid: Vec<f64> = (1..=grid_points).map(|j| j as f64 * h).collect();
        let mut basis = Vec::with_capacity(grid_points * n_modes);
        for &xi in &grid {
            for k in 1..=n_modes {
                basis.push(SQRT_2 * libm::sin(k as f64 * PI * xi));
            }
        }
        Ok(SpectralModel { n_modes, grid_points, a, q, grid, weight: h, basis })
    }

    /// Dirichlet model with the default grid `M = 4N`.
    pub fn dirichlet_default(n_modes: usize) -> Result<Self> {
        Self::dirichlet(n_modes, 4 * n_modes)
    }

    pub fn from_manifest(m: &ModelManifest) -> Result<Self> {
        if m.eigenvalue_family != DIRICHLET_FAMILY {
            return Err(Error::Config(alloc::format!(
                "unknown eigenvalue family `{}`",
                m.eigenvalue_family
            )));
        }
        Self::dirichlet(m.n_modes, m.grid_points)
    }

    pub fn manifest(&self) -> ModelManifest {
        ModelManifest {
            n_modes: self.n_modes,
            grid_points: self.grid_points,
            eigenvalue_family: DIRICHLET_FAMILY.into(),
        }
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn grid_points(&self) -> usize {
        self.grid_points
    }

    /// Eigenvalues of `−A`.
    pub fn a(&self) -> &[f64] {
        &self.a
    }

    /// Covariance eigenvalues of γ.
    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn quad_weight(&self) -> f64 {
        self.weight
    }

    pub fn zeros(&self) -> CoeffVec {
        CoeffVec::zeros(self.n_modes)
    }

    pub(crate) fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_modes {
            return Err(Error::DimensionMismatch { expected: self.n_modes, got: x.len() });
        }
        Ok(())
    }

    /// Grid values `g_j = Σ_k x_k e_k(ξ_j)`.
    pub fn synth(&self, x: &CoeffVec) -> Result<GridFunction> {
        self.check_dim(x)?;
        let mut g = vec![0.0; self.grid_points];
        self.synth_into(x, &mut g);
        Ok(GridFunction(g))
    }

    pub(crate) fn synth_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n_modes;
        for (j, gj) in out.iter_mut().enumerate() {
            let row = &self.basis[j * n..(j + 1) * n];
            *gj = row.iter().zip(x).map(|(b, c)| b * c).sum();
        }
    }

    /// Coefficients `x_k = Σ_j w g_j e_k(ξ_j)`.
    pub fn analyze(&self, g: &GridFunction) -> Result<CoeffVec> {
        if g.len() != self.grid_points {
            return Err(Error::DimensionMismatch { expected: self.grid_points, got: g.len() });
        }
        let mut x = vec![0.0; self.n_modes];
        self.analyze_into(g, &mut x);
        Ok(CoeffVec(x))
    }

    pub(crate) fn analyze_into(&self, g: &[f64], out: &mut [f64]) {
        let n = self.n_modes;
        out.iter_mut().for_each(|v| *v = 0.0);
        for (j, gj) in g.iter().enumerate() {
            let row = &self.basis[j * n..(j + 1) * n];
            let wg = self.weight * gj;
            for (o, b) in out.iter_mut().zip(row) {
                *o += wg * b;
            }
        }
    }

    /// Quadrature of a grid function over (0,1).
    pub fn integrate(&self, g: &[f64]) -> f64 {
        self.weight * g.iter().sum::<f64>()
    }

    /// Pointwise evaluation `x(ξ)` off the grid.
    pub fn eval_at(&self, x: &CoeffVec, xi: f64) -> f64 {
        x.iter()
            .enumerate()
            .map(|(k, c)| c * SQRT_2 * libm::sin((k + 1) as f64 * PI * xi))
            .sum()
    }

    /// `x_k = √q_k ζ_k`, `ζ_k` i.i.d. standard normal.
    pub fn sample_gamma(&self, rng: &mut Stream) -> CoeffVec {
        CoeffVec(self.q.iter().map(|qk| libm::sqrt(*qk) * rng::normal(rng)).collect())
    }

    /// Importance sample of the Gibbs measure `ν ∝ e^{−V} γ` using γ proposals.
    ///
    /// Sample `i` is drawn from `key.child(i)`.
    pub fn sample_nu(
        &self,
        potential: &dyn ConvexPotential,
        n_samples: usize,
        key: StreamKey,
    ) -> Result<WeightedSamples> {
        let mut samples = Vec::with_capacity(n_samples);
        let mut energies = Vec::with_capacity(n_samples);
        for i in 0..n_samples {
            let x = self.sample_gamma(&mut key.child(i as u64).stream());
            energies.push(potential.value(&x));
            samples.push(x);
        }
        WeightedSamples::from_energies(samples, &energies)
    }
}

/// Self-normalized importance sample.
#[derive(Debug, Clone)]
pub struct WeightedSamples {
    pub samples: Vec<CoeffVec>,
    /// Normalized weights (sum to one).
    pub weights: Vec<f64>,
    /// Mean raw weight `n⁻¹ Σ e^{−V(x_i)}`, an estimate of the normalizer.
    pub z_hat: f64,
    pub ess: f64,
}

impl WeightedSamples {
    pub fn from_energies(samples: Vec<CoeffVec>, energies: &[f64]) -> Result<Self> {
        let vmin = energies.iter().copied().filter(|v| v.is_finite()).fold(f64::INFINITY, f64::min);
        if !vmin.is_finite() {
            return Err(Error::DegenerateMeasure);
        }
        let shifted: Vec<f64> = energies.iter().map(|v| libm::exp(-(v - vmin))).collect();
        let total: f64 = shifted.iter().sum();
        let weights: Vec<f64> = shifted.iter().map(|w| w / total).collect();
        let ess = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let z_hat = energies.iter().map(|v| libm::exp(-v)).sum::<f64>() / energies.len() as f64;
        Ok(WeightedSamples { samples, weights, z_hat, ess })
    }

    /// Self-normalized estimate of `∫ f dν`.
    pub fn expect(&self, mut f: impl FnMut(&CoeffVec) -> f64) -> f64 {
        self.samples.iter().zip(&self.weights).map(|(x, w)| w * f(x)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::{PowerPotential, QuadraticPotential, ZeroPotential};
    use alloc::sync::Arc;

    #[test]
    fn first_eigenvalues() {
        let m = SpectralModel::dirichlet_default(2).unwrap();
        assert!((m.a()[0] - 9.869_604_401_089_358).abs() < 1e-12);
        assert!((m.q()[0] - 0.050_660_591_821_168_89).abs() < 1e-12);
        assert!((m.q()[1] - 1.0 / (8.0 * PI * PI)).abs() < 1e-15);
        assert!((m.q()[1] - 0.012_665).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(matches!(SpectralModel::dirichlet(0, 4), Err(Error::Config(_))));
        assert!(matches!(SpectralModel::dirichlet(4, 7), Err(Error::Config(_))));
    }

    #[test]
    fn trace_partial_sum_with_tail() {
        // Σ_{k≤64} q_k plus ∫_64^∞ ds/(2π²s²) brackets 1/12.
        let m = SpectralModel::dirichlet_default(64).unwrap();
        let partial: f64 = m.q().iter().sum();
        let tail = 1.0 / (2.0 * PI * PI * 64.0);
        assert!(partial < 1.0 / 12.0);
        assert!(1.0 / 12.0 - partial <= tail);
        // monotone partial sums bounded by 1/12
        let mut s = 0.0;
        for q in m.q() {
            s += q;
            assert!(s < 1.0 / 12.0);
        }
    }

    #[test]
    fn quadrature_orthonormality() {
        let m = SpectralModel::dirichlet_default(64).unwrap();
        for k in 0..64 {
            let gk = m.synth(&CoeffVec::unit(64, k)).unwrap();
            for l in 0..64 {
                let gl = m.synth(&CoeffVec::unit(64, l)).unwrap();
                let prod: Vec<f64> = gk.iter().zip(gl.iter()).map(|(a, b)| a * b).collect();
                let expect = if k == l { 1.0 } else { 0.0 };
                assert!((m.integrate(&prod) - expect).abs() < 1e-10, "k={k} l={l}");
            }
        }
    }

    #[test]
    fn synth_of_first_basis_vector() {
        let m = SpectralModel::dirichlet_default(3).unwrap();
        let g = m.synth(&CoeffVec::unit(3, 0)).unwrap();
        for (gj, xi) in g.iter().zip(m.grid()) {
            assert!((gj - SQRT_2 * (PI * xi).sin()).abs() < 1e-14);
        }
        let z = m.synth(&m.zeros()).unwrap();
        assert!(z.iter().all(|v| *v == 0.0));
        assert_eq!(m.analyze(&z).unwrap(), m.zeros());
    }

    #[test]
    fn dimension_mismatch() {
        let m = SpectralModel::dirichlet_default(3).unwrap();
        assert!(matches!(m.synth(&CoeffVec::zeros(4)), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(
            m.analyze(&GridFunction(vec![0.0; 5])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn manifest_roundtrip() {
        let m = SpectralModel::dirichlet(5, 17).unwrap();
        let back = SpectralModel::from_manifest(&m.manifest()).unwrap();
        assert_eq!(back.n_modes(), 5);
        assert_eq!(back.grid_points(), 17);
    }

    #[test]
    fn gamma_sampling_is_reproducible() {
        let m = SpectralModel::dirichlet_default(8).unwrap();
        let key = StreamKey::root(3, 1);
        let a = m.sample_gamma(&mut key.stream());
        let b = m.sample_gamma(&mut key.stream());
        assert_eq!(a, b);
    }

    #[test]
    fn gamma_moments() {
        let m = SpectralModel::dirichlet_default(4).unwrap();
        let n = 100_000;
        let mut rng = StreamKey::root(11, 0).stream();
        let mut s1 = [0.0; 4];
        let mut s2 = [0.0; 4];
        for _ in 0..n {
            let x = m.sample_gamma(&mut rng);
            for k in 0..4 {
                s1[k] += x[k];
                s2[k] += x[k] * x[k];
            }
        }
        for k in 0..4 {
            let mean = s1[k] / n as f64;
            let var = s2[k] / n as f64 - mean * mean;
            let q = m.q()[k];
            assert!(mean.abs() <= 4.0 / (n as f64).sqrt() * q.sqrt(), "mode {k} mean {mean}");
            assert!((var / q - 1.0).abs() < 0.05, "mode {k} var {var} vs {q}");
        }
    }

    #[test]
    fn nu_with_zero_potential_is_gamma() {
        let m = SpectralModel::dirichlet_default(4).unwrap();
        let ws = m.sample_nu(&ZeroPotential, 100, StreamKey::root(1, 1)).unwrap();
        assert!(ws.weights.iter().all(|w| (w - 0.01).abs() < 1e-15));
        assert!((ws.z_hat - 1.0).abs() < 1e-15);
        assert!((ws.ess - 100.0).abs() < 1e-9);
    }

    #[test]
    fn nu_quadratic_second_moments() {
        // e^{−V}γ for V = ½|x|² is Gaussian with variance q_k/(1 + q_k) = 1/(2a_k + 1).
        let m = SpectralModel::dirichlet_default(4).unwrap();
        let v = QuadraticPotential::new(1.0);
        let ws = m.sample_nu(&v, 100_000, StreamKey::root(5, 2)).unwrap();
        for k in 0..4 {
            let est = ws.expect(|x| x[k] * x[k]);
            let exact = m.q()[k] / (1.0 + m.q()[k]);
            assert!((exact - 1.0 / (2.0 * m.a()[k] + 1.0)).abs() < 1e-15);
            assert!((est / exact - 1.0).abs() < 0.05, "mode {k}: {est} vs {exact}");
        }
    }

    #[test]
    fn nu_power_normalizer_in_unit_interval() {
        let m = Arc::new(SpectralModel::dirichlet_default(8).unwrap());
        let v = PowerPotential::new(m.clone(), 3.0, 0.0).unwrap();
        let ws = m.sample_nu(&v, 2000, StreamKey::root(2, 2)).unwrap();
        assert!(ws.z_hat > 0.0 && ws.z_hat <= 1.0);
        assert!(ws.ess > 1.0 && ws.ess <= 2000.0);
    }

    #[test]
    fn degenerate_measure() {
        let samples = vec![CoeffVec::zeros(1); 3];
        let err = WeightedSamples::from_energies(samples, &[f64::INFINITY; 3]).unwrap_err();
        assert!(matches!(err, Error::DegenerateMeasure));
    }
}
