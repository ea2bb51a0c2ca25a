//! Convex potentials `V`, their Yosida machinery, and bounded drifts `B`.
//!
//! Sign convention: the nonlinear drift is `F = −∂V`, so the Yosida resolvent
//! is `J_α = (I + α∂V)⁻¹` (non-expansive) and `F_α = (J_α − I)/α`.

use alloc::sync::Arc;

use num_traits::float::FloatCore;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::observable::{gaussian_sign_mean, sgn, Observable};
use crate::ou::{ou_resolvent, ou_resolvent_samples, OuTransition};
use crate::rng::StreamKey;
use crate::spectral::{CoeffVec, SpectralModel};
use crate::stats::{Estimate, VecEstimate};

pub trait ConvexPotential: Send + Sync {
    /// `V(x) ∈ [0, ∞]`.
    fn value(&self, x: &CoeffVec) -> f64;

    fn gradient(&self, x: &CoeffVec) -> CoeffVec;

    /// `J_α(x) = (I + α∂V)⁻¹ x`.
    fn resolvent(&self, alpha: f64, x: &CoeffVec) -> Result<CoeffVec> {
        prox_descent(self, alpha, x)
    }

    /// Yosida approximation `F_α(x) = (J_α(x) − x)/α` of `F = −∂V`.
    fn yosida_drift(&self, alpha: f64, x: &CoeffVec) -> Result<CoeffVec> {
        let j = self.resolvent(alpha, x)?;
        Ok(CoeffVec(j.iter().zip(x.iter()).map(|(a, b)| (a - b) / alpha).collect()))
    }

    /// `D²V(x)(h₁, h₂)` when available.
    fn hessian_quadform(&self, _x: &CoeffVec, _h1: &CoeffVec, _h2: &CoeffVec) -> Option<f64> {
        None
    }

    /// Quadratic shift `ω` (the `(ω/2)|x|²` part).
    fn omega(&self) -> f64;

    /// `Some(ω)` when `∇V(x) = ωx` exactly, so `−A + ∇V` is diagonal.
    fn linear_rate(&self) -> Option<f64> {
        None
    }

    /// Norm used for path diagnostics (`L^{2m}` for power potentials).
    fn e_norm(&self, x: &CoeffVec) -> f64 {
        x.norm()
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::param("alpha", alpha, "Yosida parameter must be positive"))
    }
}

/// Proximal point `argmin_y ½|y − x|² + αV(y)`, i.e. the root of
/// `r(y) = y − x + α∇V(y)`, by damped fixed-point steps `y ← y − s·r(y)`
/// accepted only when `|r|` decreases. Generic fallback for potentials
/// without a pointwise structure.
pub fn prox_descent<P: ConvexPotential + ?Sized>(
    potential: &P,
    alpha: f64,
    x: &CoeffVec,
) -> Result<CoeffVec> {
    check_alpha(alpha)?;
    let residual = |y: &CoeffVec| {
        let mut r = y.sub(x);
        r.axpy(alpha, &potential.gradient(y));
        r
    };
    let tol = 1e-10 * (1.0 + x.norm());
    let mut y = x.clone();
    let mut r = residual(&y);
    let mut rn = r.norm();
    let mut step: f64 = 1.0;
    for _ in 0..500 {
        if rn <= tol {
            return Ok(y);
        }
        let mut cand = y.clone();
        cand.axpy(-step, &r);
        let rc = residual(&cand);
        let rcn = rc.norm();
        if rcn < rn {
            y = cand;
            r = rc;
            rn = rcn;
            step = (2.0 * step).min(1.0);
        } else {
            step *= 0.5;
            if step < 1e-12 {
                break;
            }
        }
    }
    if rn <= 1e3 * tol {
        Ok(y)
    } else {
        Err(Error::RootFinding { target: x.norm() })
    }
}

/// `V ≡ 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPotential;

impl ConvexPotential for ZeroPotential {
    fn value(&self, _: &CoeffVec) -> f64 {
        0.0
    }
    fn gradient(&self, x: &CoeffVec) -> CoeffVec {
        CoeffVec::zeros(x.len())
    }
    fn resolvent(&self, alpha: f64, x: &CoeffVec) -> Result<CoeffVec> {
        check_alpha(alpha)?;
        Ok(x.clone())
    }
    fn hessian_quadform(&self, _: &CoeffVec, _: &CoeffVec, _: &CoeffVec) -> Option<f64> {
        Some(0.0)
    }
    fn omega(&self) -> f64 {
        0.0
    }
    fn linear_rate(&self) -> Option<f64> {
        Some(0.0)
    }
}

/// `V(x) = (ω/2)|x|²`.
#[derive(Debug, Clone, Copy)]
pub struct QuadraticPotential {
    omega: f64,
}

impl QuadraticPotential {
    pub fn new(omega: f64) -> Self {
        QuadraticPotential { omega }
    }
}

impl ConvexPotential for QuadraticPotential {
    fn value(&self, x: &CoeffVec) -> f64 {
        0.5 * self.omega * x.dot(x)
    }
    fn gradient(&self, x: &CoeffVec) -> CoeffVec {
        x.scaled(self.omega)
    }
    fn resolvent(&self, alpha: f64, x: &CoeffVec) -> Result<CoeffVec> {
        check_alpha(alpha)?;
        Ok(x.scaled(1.0 / (1.0 + alpha * self.omega)))
    }
    fn hessian_quadform(&self, _: &CoeffVec, h1: &CoeffVec, h2: &CoeffVec) -> Option<f64> {
        Some(self.omega * h1.dot(h2))
    }
    fn omega(&self) -> f64 {
        self.omega
    }
    fn linear_rate(&self) -> Option<f64> {
        Some(self.omega)
    }
}

/// `V(x) = ∫₀¹ |x(ξ)|^{m+1} dξ + (ω/2)|x|²` evaluated by grid quadrature.
///
/// Quadrature of the non-polynomial integrand is exact only asymptotically in
/// the grid size; for integer `m` and `M ≥ (m+1)N/2` it is exact.
#[derive(Debug, Clone)]
pub struct PowerPotential {
    model: Arc<SpectralModel>,
    m: f64,
    m_int: Option<i32>,
    omega: f64,
}

impl PowerPotential {
    pub fn new(model: Arc<SpectralModel>, m: f64, omega: f64) -> Result<Self> {
        if !(m >= 1.0) || !m.is_finite() {
            return Err(Error::param("m", m, "power exponent must be at least 1"));
        }
        if !(omega >= 0.0) {
            return Err(Error::param("omega", omega, "quadratic shift must be nonnegative"));
        }
        let m_int = (libm::floor(m) == m && m < 64.0).then_some(m as i32);
        Ok(PowerPotential { model, m, m_int, omega })
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn model(&self) -> &SpectralModel {
        &self.model
    }

    #[inline]
    fn abs_pow(&self, v: f64, p: f64) -> f64 {
        let a = libm::fabs(v);
        match self.m_int {
            Some(_) if libm::floor(p) == p => FloatCore::powi(a, p as i32),
            _ => libm::pow(a, p),
        }
    }

    /// Pointwise `(m+1)|g|^{m−1}g`.
    #[inline]
    fn field(&self, g: f64) -> f64 {
        (self.m + 1.0) * self.abs_pow(g, self.m - 1.0) * g
    }

    /// Solves `y + α(m+1)|y|^{m−1}y + αωy = g` for `y`; root lies in `[−|g|, |g|]`.
    fn solve_node(&self, alpha: f64, g: f64) -> Result<f64> {
        let s = libm::fabs(g);
        if s == 0.0 {
            return Ok(0.0);
        }
        let lin = 1.0 + alpha * self.omega;
        let c = alpha * (self.m + 1.0);
        let phi = |r: f64| r * lin + c * self.abs_pow(r, self.m) - s;
        let tol = 1e-12 * s.max(1.0);
        // φ is increasing and convex on [0, s]; Newton from the right stays
        // above the root and decreases monotonically.
        let (mut lo, mut hi) = (0.0, s);
        let mut r = s / lin;
        for _ in 0..200 {
            let f = phi(r);
            if f > 0.0 {
                hi = r;
            } else {
                lo = r;
            }
            if libm::fabs(f) <= 1e-3 * tol || hi - lo <= 1e-16 * s {
                break;
            }
            let df = lin + c * self.m * self.abs_pow(r, self.m - 1.0);
            let next = r - f / df;
            r = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
        }
        if libm::fabs(phi(r)) <= tol {
            Ok(if g > 0.0 { r } else { -r })
        } else {
            Err(Error::RootFinding { target: g })
        }
    }
}

impl ConvexPotential for PowerPotential {
    fn value(&self, x: &CoeffVec) -> f64 {
        let mut g = vec![0.0; self.model.grid_points()];
        self.model.synth_into(x, &mut g);
        let p = self.m + 1.0;
        let integrand: Vec<f64> = g.iter().map(|v| self.abs_pow(*v, p)).collect();
        self.model.integrate(&integrand) + 0.5 * self.omega * x.dot(x)
    }

    fn gradient(&self, x: &CoeffVec) -> CoeffVec {
        let mut g = vec![0.0; self.model.grid_points()];
        self.model.synth_into(x, &mut g);
        for v in g.iter_mut() {
            *v = self.field(*v);
        }
        let mut out = CoeffVec::zeros(x.len());
        self.model.analyze_into(&g, &mut out);
        out.axpy(self.omega, x);
        out
    }

    /// Per-node scalar resolvent followed by projection onto the modes.
    fn resolvent(&self, alpha: f64, x: &CoeffVec) -> Result<CoeffVec> {
        check_alpha(alpha)?;
        self.model.check_dim(x)?;
        let mut g = vec![0.0; self.model.grid_points()];
        self.model.synth_into(x, &mut g);
        for v in g.iter_mut() {
            *v = self.solve_node(alpha, *v)?;
        }
        let mut out = CoeffVec::zeros(x.len());
        self.model.analyze_into(&g, &mut out);
        Ok(out)
    }

    fn hessian_quadform(&self, x: &CoeffVec, h1: &CoeffVec, h2: &CoeffVec) -> Option<f64> {
        let n = self.model.grid_points();
        let (mut g, mut a, mut b) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        self.model.synth_into(x, &mut g);
        self.model.synth_into(h1, &mut a);
        self.model.synth_into(h2, &mut b);
        let integrand: Vec<f64> = (0..n)
            .map(|j| {
                // |g|^{m−1} with 0^0 = 1 for the linear case
                let w = if self.m == 1.0 { 1.0 } else { self.abs_pow(g[j], self.m - 1.0) };
                w * a[j] * b[j]
            })
            .collect();
        Some(self.m * (self.m + 1.0) * self.model.integrate(&integrand) + self.omega * h1.dot(h2))
    }

    fn omega(&self) -> f64 {
        self.omega
    }

    fn e_norm(&self, x: &CoeffVec) -> f64 {
        let mut g = vec![0.0; self.model.grid_points()];
        self.model.synth_into(x, &mut g);
        let p = 2.0 * self.m;
        let integrand: Vec<f64> = g.iter().map(|v| self.abs_pow(*v, p)).collect();
        libm::pow(self.model.integrate(&integrand), 1.0 / p)
    }
}

/// Adapter exposing `V` as an observable.
pub struct PotentialValue(pub Arc<dyn ConvexPotential>);

impl Observable for PotentialValue {
    fn eval(&self, x: &CoeffVec, _: StreamKey) -> f64 {
        self.0.value(x)
    }
}

/// `V(x) = R(λ, L^{OU})φ(x) + (ω/2)|x|²` estimated with a fixed sample set, so
/// `V` is a deterministic function of `x`. For a fixed draw `(τ, η)` the map
/// `x ↦ φ(e^{τA}x + η)` is convex, hence so is the estimate.
pub struct ResolventPotential {
    model: Arc<SpectralModel>,
    phi: Arc<dyn ConvexPotential>,
    lambda: f64,
    n_samples: usize,
    key: StreamKey,
    omega: f64,
}

impl ResolventPotential {
    pub fn new(
        model: Arc<SpectralModel>,
        phi: Arc<dyn ConvexPotential>,
        lambda: f64,
        n_samples: usize,
        key: StreamKey,
        omega: f64,
    ) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::param("lambda", lambda, "resolvent rate must be positive"));
        }
        if n_samples == 0 {
            return Err(Error::param("n_samples", 0.0, "need at least one sample"));
        }
        Ok(ResolventPotential { model, phi, lambda, n_samples, key, omega })
    }

    pub fn estimate(&self, x: &CoeffVec) -> Result<Estimate> {
        resolvent_potential(&self.model, self.phi.clone(), self.lambda, x, self.n_samples, self.key)
    }

    fn raw(&self, x: &CoeffVec) -> f64 {
        let obs = PotentialValue(self.phi.clone());
        let s = ou_resolvent_samples(&self.model, 0.0, &obs, self.lambda, x, self.n_samples, self.key)
            .unwrap_or_else(|_| vec![f64::INFINITY]);
        s.iter().sum::<f64>() / s.len() as f64
    }

    /// Common-random-number central difference step `10⁻³(1 + |x|)`.
    pub fn fd_step(x: &CoeffVec) -> f64 {
        1e-3 * (1.0 + x.norm())
    }
}

impl ConvexPotential for ResolventPotential {
    fn value(&self, x: &CoeffVec) -> f64 {
        self.raw(x) + 0.5 * self.omega * x.dot(x)
    }

    fn gradient(&self, x: &CoeffVec) -> CoeffVec {
        let d = Self::fd_step(x);
        let mut out = x.scaled(self.omega);
        for k in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += d;
            xm[k] -= d;
            out[k] += (self.raw(&xp) - self.raw(&xm)) / (2.0 * d);
        }
        out
    }

    fn omega(&self) -> f64 {
        self.omega
    }
}

/// `R(λ, L^{OU})φ(x)` for a convex `φ`, with CI.
pub fn resolvent_potential(
    model: &SpectralModel,
    phi: Arc<dyn ConvexPotential>,
    lambda: f64,
    x: &CoeffVec,
    n_samples: usize,
    key: StreamKey,
) -> Result<Estimate> {
    ou_resolvent(model, &PotentialValue(phi), lambda, x, n_samples, key)
}

/// Doubly regularized drift
/// `F_{α,β}(x) = e^{βA} ∫ F_α(e^{βA}x + y) N_{Q_β}(dy)`.
pub fn smoothed_drift(
    model: &SpectralModel,
    potential: &dyn ConvexPotential,
    alpha: f64,
    beta: f64,
    x: &CoeffVec,
    n_samples: usize,
    key: StreamKey,
) -> Result<VecEstimate> {
    check_alpha(alpha)?;
    if !(beta > 0.0) {
        return Err(Error::param("beta", beta, "smoothing time must be positive"));
    }
    let tr = OuTransition::new(model, beta)?;
    let n = x.len();
    let mut columns: Vec<Vec<f64>> = vec![Vec::with_capacity(n_samples); n];
    for i in 0..n_samples {
        let y = tr.sample(x, &mut key.child(i as u64).stream());
        let f = potential.yosida_drift(alpha, &y)?;
        for k in 0..n {
            columns[k].push(tr.decay[k] * f[k]);
        }
    }
    let mut value = CoeffVec::zeros(n);
    let mut ci = Vec::with_capacity(n);
    for (k, col) in columns.iter().enumerate() {
        let e = Estimate::from_samples(col);
        value[k] = e.value;
        ci.push(e.ci);
    }
    Ok(VecEstimate { value, ci, n_samples })
}

/// Bounded measurable drift `B: H → H` with certified `‖B‖∞`.
pub trait BoundedDrift: Send + Sync {
    fn eval(&self, x: &CoeffVec) -> CoeffVec;

    fn b_inf(&self) -> f64;

    /// `false` when `⟨B, e_{i+1}⟩ ≡ 0`.
    fn component_active(&self, _i: usize) -> bool {
        true
    }

    /// `E⟨B(m + η), e_{i+1}⟩`, `η ~ N(0, diag(var))`, when known.
    fn component_gaussian_mean(&self, _i: usize, _mean: &CoeffVec, _var: &[f64]) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroDrift;

impl BoundedDrift for ZeroDrift {
    fn eval(&self, x: &CoeffVec) -> CoeffVec {
        CoeffVec::zeros(x.len())
    }
    fn b_inf(&self) -> f64 {
        0.0
    }
    fn component_active(&self, _: usize) -> bool {
        false
    }
    fn component_gaussian_mean(&self, _: usize, _: &CoeffVec, _: &[f64]) -> Option<f64> {
        Some(0.0)
    }
}

/// `B ≡ c`.
#[derive(Debug, Clone)]
pub struct ConstantDrift {
    c: CoeffVec,
    norm: f64,
}

impl ConstantDrift {
    pub fn new(c: CoeffVec) -> Self {
        let norm = c.norm();
        ConstantDrift { c, norm }
    }
}

impl BoundedDrift for ConstantDrift {
    fn eval(&self, _: &CoeffVec) -> CoeffVec {
        self.c.clone()
    }
    fn b_inf(&self) -> f64 {
        self.norm
    }
    fn component_active(&self, i: usize) -> bool {
        self.c.get(i).is_some_and(|v| *v != 0.0)
    }
    fn component_gaussian_mean(&self, i: usize, _: &CoeffVec, _: &[f64]) -> Option<f64> {
        Some(self.c.get(i).copied().unwrap_or(0.0))
    }
}

/// `B(x) = b·sgn(x_1)·e_1` with `sgn(0) = 0`.
#[derive(Debug, Clone, Copy)]
pub struct SignDrift {
    pub b: f64,
}

impl BoundedDrift for SignDrift {
    fn eval(&self, x: &CoeffVec) -> CoeffVec {
        let mut out = CoeffVec::zeros(x.len());
        out[0] = self.b * sgn(x[0]);
        out
    }
    fn b_inf(&self) -> f64 {
        libm::fabs(self.b)
    }
    fn component_active(&self, i: usize) -> bool {
        i == 0 && self.b != 0.0
    }
    fn component_gaussian_mean(&self, i: usize, m: &CoeffVec, var: &[f64]) -> Option<f64> {
        Some(if i == 0 { self.b * gaussian_sign_mean(m[0], var[0]) } else { 0.0 })
    }
}

/// `B(x) = b·tanh(x_1)·e_1`.
#[derive(Debug, Clone, Copy)]
pub struct TanhDrift {
    pub b: f64,
}

impl BoundedDrift for TanhDrift {
    fn eval(&self, x: &CoeffVec) -> CoeffVec {
        let mut out = CoeffVec::zeros(x.len());
        out[0] = self.b * libm::tanh(x[0]);
        out
    }
    fn b_inf(&self) -> f64 {
        libm::fabs(self.b)
    }
    fn component_active(&self, i: usize) -> bool {
        i == 0 && self.b != 0.0
    }
}

/// `−B`.
pub struct NegatedDrift<'a>(pub &'a dyn BoundedDrift);

impl BoundedDrift for NegatedDrift<'_> {
    fn eval(&self, x: &CoeffVec) -> CoeffVec {
        self.0.eval(x).scaled(-1.0)
    }
    fn b_inf(&self) -> f64 {
        self.0.b_inf()
    }
    fn component_active(&self, i: usize) -> bool {
        self.0.component_active(i)
    }
    fn component_gaussian_mean(&self, i: usize, m: &CoeffVec, var: &[f64]) -> Option<f64> {
        self.0.component_gaussian_mean(i, m, var).map(|v| -v)
    }
}

/// The scalar field `f^i = ⟨B, e_{i+1}⟩`.
pub struct DriftComponent {
    pub drift: Arc<dyn BoundedDrift>,
    pub index: usize,
}

impl Observable for DriftComponent {
    fn eval(&self, x: &CoeffVec, _: StreamKey) -> f64 {
        self.drift.eval(x)[self.index]
    }
    fn gaussian_mean(&self, mean: &CoeffVec, var: &[f64]) -> Option<f64> {
        self.drift.component_gaussian_mean(self.index, mean, var)
    }
    fn sup_norm(&self) -> Option<f64> {
        Some(self.drift.b_inf())
    }
    fn constant_value(&self) -> Option<f64> {
        (!self.drift.component_active(self.index)).then_some(0.0)
    }
}
