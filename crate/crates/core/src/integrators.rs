//! Time discretization of `dX = (AX − ∇V(X) + B(X)) dt + dW` on shared
//! Brownian tables, coupled-path diagnostics, Girsanov weights and occupation
//! integrals.
//!
//! One step of size `h` (split-implicit):
//!
//! 1. `X ← J_h(X)`, the implicit gradient flow of `V`;
//! 2. `X ← X + h·B(X)`;
//! 3. `X_k ← e^{−a_k h} X_k + √(var_k(h)/h)·ΔW_k`.
//!
//! Scaling the tabulated increment keeps the one-step variance exact while
//! every level and scheme is driven by the same `ΔW`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ou::OuTransition;
use crate::potential::{BoundedDrift, ConvexPotential};
use crate::rng::{self, StreamKey};
use crate::spectral::{CoeffVec, SpectralModel};
use crate::zvonkin::ZvonkinTransform;

/// `|X|` beyond which a run is declared unstable.
pub const BLOW_UP_NORM: f64 = 1e8;

/// `|φ(X) − φ(Y)|` below which the pair counts as coincident.
pub const COINCIDENCE_CUTOFF: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Scheme {
    /// Implicit `V`-flow via the Yosida resolvent `J_h`.
    SplitImplicit,
    /// Explicit step `X + hF_α(X)` with `α = alpha_ratio·h`. Ratio 1
    /// reproduces the implicit step; ratio ½ gives the reflected resolvent
    /// `2J_{h/2} − I`.
    YosidaExplicit { alpha_ratio: f64 },
}

impl Scheme {
    pub fn label(&self) -> &'static str {
        match self {
            Scheme::SplitImplicit => "split-implicit",
            Scheme::YosidaExplicit { .. } => "yosida-explicit",
        }
    }
}

/// Brownian increments on the dyadic grid `h₀ = T/2^L`, stored step-major
/// (`table[j·N + k] = ΔW_k(j)`).
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianIncrements {
    t_end: f64,
    level: u32,
    n_modes: usize,
    table: Vec<f64>,
}

impl BrownianIncrements {
    /// Draws `2^level` steps from the stream at `key`.
    pub fn generate(n_modes: usize, t_end: f64, level: u32, key: StreamKey) -> Result<Self> {
        if !(t_end > 0.0) {
            return Err(Error::param("t_end", t_end, "horizon must be positive"));
        }
        if level > 30 {
            return Err(Error::param("level", level as f64, "at most 2^30 steps"));
        }
        let steps = 1usize << level;
        let sd = libm::sqrt(t_end / steps as f64);
        let mut rng = key.stream();
        let table = (0..steps * n_modes).map(|_| sd * rng::normal(&mut rng)).collect();
        Ok(BrownianIncrements { t_end, level, n_modes, table })
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn n_steps(&self) -> usize {
        1 << self.level
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn step_size(&self) -> f64 {
        self.t_end / self.n_steps() as f64
    }

    pub fn increment(&self, j: usize) -> &[f64] {
        &self.table[j * self.n_modes..(j + 1) * self.n_modes]
    }

    /// Sums consecutive pairs of increments: the table one level coarser.
    pub fn coarsen(&self) -> Result<Self> {
        if self.level == 0 {
            return Err(Error::NoiseMismatch("cannot coarsen a single-step table".into()));
        }
        let n = self.n_modes;
        let steps = self.n_steps() / 2;
        let mut table = Vec::with_capacity(steps * n);
        for j in 0..steps {
            let (a, b) = (self.increment(2 * j), self.increment(2 * j + 1));
            table.extend(a.iter().zip(b).map(|(u, v)| u + v));
        }
        Ok(BrownianIncrements { t_end: self.t_end, level: self.level - 1, n_modes: n, table })
    }

    /// The table aggregated to `level` by repeated pairwise summation.
    pub fn view(&self, level: u32) -> Result<Self> {
        if level > self.level {
            return Err(Error::NoiseMismatch(format!(
                "requested level {level} is finer than the table level {}",
                self.level
            )));
        }
        let mut v = self.clone();
        while v.level > level {
            v = v.coarsen()?;
        }
        Ok(v)
    }
}

/// Running quantities recorded at each path time.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// `∫⟨B(X), dW⟩`
    pub int_b_dw: f64,
    /// `∫⟨∇V(X), dW⟩`
    pub int_v_dw: f64,
    /// `∫|∇V(X)|² ds`
    pub int_v2: f64,
    /// `|X|_E`
    pub e_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub times: Vec<f64>,
    pub states: Vec<CoeffVec>,
    pub diagnostics: Vec<Diagnostics>,
}

impl Path {
    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    pub fn terminal(&self) -> &CoeffVec {
        self.states.last().expect("path has at least one state")
    }

    fn level(&self) -> Result<u32> {
        let n = self.n_steps();
        if n.is_power_of_two() {
            Ok(n.trailing_zeros())
        } else {
            Err(Error::NoiseMismatch(format!("path has {n} steps, not a power of two")))
        }
    }
}

/// Single-step map shared by path simulation and the resolvent estimators.
pub struct Stepper<'a> {
    pub potential: &'a dyn ConvexPotential,
    pub drift: Option<&'a dyn BoundedDrift>,
    pub scheme: Scheme,
}

impl Stepper<'_> {
    /// Steps 1–2: the deterministic part applied before the OU substep.
    pub fn predrift(&self, x: &CoeffVec, h: f64) -> Result<CoeffVec> {
        let mut y = match self.scheme {
            Scheme::SplitImplicit => self.potential.resolvent(h, x)?,
            Scheme::YosidaExplicit { alpha_ratio } => {
                let f = self.potential.yosida_drift(alpha_ratio * h, x)?;
                let mut y = x.clone();
                y.axpy(h, &f);
                y
            }
        };
        if let Some(b) = self.drift {
            y.axpy(h, &b.eval(x));
        }
        Ok(y)
    }

    /// Full step driven by a Brownian increment `dw` over `h`.
    pub fn step(&self, x: &CoeffVec, tr: &OuTransition, dw: &[f64]) -> Result<CoeffVec> {
        let mut y = self.predrift(x, tr.t)?;
        let inv_h = 1.0 / tr.t;
        for (k, yk) in y.iter_mut().enumerate() {
            *yk = tr.decay[k] * *yk + libm::sqrt(tr.var[k] * inv_h) * dw[k];
        }
        Ok(y)
    }
}

fn guard(x: &CoeffVec, step: usize) -> Result<()> {
    let norm = x.norm();
    if !norm.is_finite() || norm > BLOW_UP_NORM {
        return Err(Error::BlowUp { step, norm });
    }
    Ok(())
}

fn check_horizon(t_end: f64, noise: &BrownianIncrements) -> Result<()> {
    if libm::fabs(t_end - noise.t_end()) > 1e-12 * t_end.max(1.0) {
        return Err(Error::NoiseMismatch(format!(
            "path horizon {t_end} differs from noise horizon {}",
            noise.t_end()
        )));
    }
    Ok(())
}

/// Simulates `X` on `n_steps` (a power of two dividing the noise table),
/// recording [`Diagnostics`] at every grid time.
#[allow(clippy::too_many_arguments)]
pub fn simulate_path(
    model: &SpectralModel,
    potential: &dyn ConvexPotential,
    drift: &dyn BoundedDrift,
    z: &CoeffVec,
    t_end: f64,
    n_steps: usize,
    scheme: Scheme,
    noise: &BrownianIncrements,
) -> Result<Path> {
    model.check_dim(z)?;
    check_horizon(t_end, noise)?;
    if noise.n_modes() != model.n_modes() {
        return Err(Error::DimensionMismatch { expected: model.n_modes(), got: noise.n_modes() });
    }
    if !n_steps.is_power_of_two() || n_steps > noise.n_steps() {
        return Err(Error::NoiseMismatch(format!(
            "n_steps = {n_steps} must be a power of two dividing the {}-step table",
            noise.n_steps()
        )));
    }
    let view = noise.view(n_steps.trailing_zeros())?;
    let h = t_end / n_steps as f64;
    let tr = OuTransition::new(model, h)?;
    let stepper = Stepper { potential, drift: Some(drift), scheme };

    let mut times = Vec::with_capacity(n_steps + 1);
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut diagnostics = Vec::with_capacity(n_steps + 1);
    let mut x = z.clone();
    let mut d = Diagnostics { e_norm: potential.e_norm(&x), ..Default::default() };
    times.push(0.0);
    states.push(x.clone());
    diagnostics.push(d);
    for j in 0..n_steps {
        let dw = view.increment(j);
        let grad = potential.gradient(&x);
        let b = drift.eval(&x);
        d.int_b_dw += b.iter().zip(dw).map(|(u, v)| u * v).sum::<f64>();
        d.int_v_dw += grad.iter().zip(dw).map(|(u, v)| u * v).sum::<f64>();
        d.int_v2 += grad.dot(&grad) * h;
        x = stepper.step(&x, &tr, dw)?;
        guard(&x, j + 1)?;
        d.e_norm = potential.e_norm(&x);
        times.push((j + 1) as f64 * h);
        states.push(x.clone());
        diagnostics.push(d);
    }
    Ok(Path { times, states, diagnostics })
}

/// Drift-removal density
/// `ρ_T = exp(−Σ⟨B(X_{t_j}), ΔW_j⟩ − ½Σ|B(X_{t_j})|² h)`.
///
/// For a path simulated with drift `B` this reweights to the `B`-free law;
/// pass [`crate::potential::NegatedDrift`] to reweight a `B`-free path to the
/// law with drift `B`.
pub fn girsanov_weight(path: &Path, noise: &BrownianIncrements, drift: &dyn BoundedDrift) -> Result<f64> {
    let level = path.level()?;
    check_horizon(path.t_end(), noise)?;
    let view = noise.view(level)?;
    let h = view.step_size();
    let mut log_rho = 0.0;
    for j in 0..path.n_steps() {
        let b = drift.eval(&path.states[j]);
        let dw = view.increment(j);
        log_rho -= b.iter().zip(dw).map(|(u, v)| u * v).sum::<f64>();
        log_rho -= 0.5 * b.dot(&b) * h;
    }
    Ok(libm::exp(log_rho))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingTimes {
    /// First time `|∫⟨B, dW⟩| ≥ n`.
    pub tau_b: f64,
    /// First time `|∫⟨∇V, dW⟩| ≥ n`.
    pub tau_v1: f64,
    /// First time `∫|∇V|² ds ≥ n`.
    pub tau_v2: f64,
}

/// First grid times `t_j`, `j ≥ 1`, at which the recorded running quantities
/// reach `threshold`; `T` if never.
pub fn stopping_times(path: &Path, threshold: f64) -> StoppingTimes {
    let t_end = path.t_end();
    let first = |q: &dyn Fn(&Diagnostics) -> f64| {
        path.diagnostics
            .iter()
            .zip(&path.times)
            .skip(1)
            .find(|(d, _)| q(d) >= threshold)
            .map_or(t_end, |(_, t)| *t)
    };
    StoppingTimes {
        tau_b: first(&|d| libm::fabs(d.int_b_dw)),
        tau_v1: first(&|d| libm::fabs(d.int_v_dw)),
        tau_v2: first(&|d| d.int_v2),
    }
}

/// Two paths from the same start and Brownian motion, sampled on their
/// common (coarser) time grid.
#[derive(Debug, Clone)]
pub struct CoupledPair {
    pub times: Vec<f64>,
    pub x: Vec<CoeffVec>,
    pub y: Vec<CoeffVec>,
}

impl CoupledPair {
    pub fn new(x: &Path, y: &Path) -> Result<Self> {
        check_horizon(x.t_end(), &BrownianIncrements {
            t_end: y.t_end(),
            level: 0,
            n_modes: 0,
            table: Vec::new(),
        })?;
        if x.states[0] != y.states[0] {
            return Err(Error::Config("coupled paths must share the initial state".into()));
        }
        let (nx, ny) = (x.n_steps(), y.n_steps());
        let n = nx.min(ny);
        if nx % n != 0 || ny % n != 0 {
            return Err(Error::NoiseMismatch(format!("step counts {nx} and {ny} are not nested")));
        }
        let (sx, sy) = (nx / n, ny / n);
        Ok(CoupledPair {
            times: (0..=n).map(|j| x.times[j * sx]).collect(),
            x: (0..=n).map(|j| x.states[j * sx].clone()).collect(),
            y: (0..=n).map(|j| y.states[j * sy].clone()).collect(),
        })
    }

    /// Keeps every `stride`-th time (and the terminal one).
    pub fn thinned(&self, stride: usize) -> Self {
        let stride = stride.max(1);
        let last = self.times.len() - 1;
        let idx: Vec<usize> = (0..=last).step_by(stride).chain((!last.is_multiple_of(stride)).then_some(last)).collect();
        CoupledPair {
            times: idx.iter().map(|&j| self.times[j]).collect(),
            x: idx.iter().map(|&j| self.x[j].clone()).collect(),
            y: idx.iter().map(|&j| self.y[j].clone()).collect(),
        }
    }

    /// `Z^α_{t_j} = αX + (1 − α)Y`.
    pub fn interpolate(&self, alpha: f64, j: usize) -> CoeffVec {
        let mut z = self.y[j].scaled(1.0 - alpha);
        z.axpy(alpha, &self.x[j]);
        z
    }

    pub fn sup_diff(&self) -> f64 {
        self.x.iter().zip(&self.y).map(|(a, b)| a.dist(b)).fold(0.0, f64::max)
    }

    pub fn terminal_diff(&self) -> f64 {
        self.x.last().unwrap().dist(self.y.last().unwrap())
    }
}

fn trapezoid_cumulative(times: &[f64], values: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(values.len());
    out.push(0.0);
    for j in 1..values.len() {
        acc += 0.5 * (times[j] - times[j - 1]) * (values[j] + values[j - 1]);
        out.push(acc);
    }
    out
}

/// The functional
///
/// ```text
/// A_t = 2∫ |∇V(X)−∇V(Y)| / |φ(X)−φ(Y)| ds
///     + 2Σ_i ∫ (u^i(X)−u^i(Y))² / |φ(X)−φ(Y)|² ds
///     +  Σ_i ∫ |Du^i(X)−Du^i(Y)|² / |φ(X)−φ(Y)|² ds
/// ```
///
/// with integrands set to zero where `|φ(X)−φ(Y)| ≤ 10⁻¹²`. Returns the
/// cumulative trapezoid values at the pair's times.
pub fn a_functional(
    pair: &CoupledPair,
    transform: &ZvonkinTransform,
    potential: &dyn ConvexPotential,
) -> Result<Vec<f64>> {
    if let Some(x0) = pair.x.first() {
        if x0.len() != transform.n_modes() {
            return Err(Error::DimensionMismatch { expected: transform.n_modes(), got: x0.len() });
        }
    }
    let mut integrand = Vec::with_capacity(pair.times.len());
    for (x, y) in pair.x.iter().zip(&pair.y) {
        let ux = transform.u_vec(x)?;
        let uy = transform.u_vec(y)?;
        let mut dphi = x.sub(y);
        dphi.axpy(1.0, &ux.sub(&uy));
        let den = dphi.norm();
        if den <= COINCIDENCE_CUTOFF {
            integrand.push(0.0);
            continue;
        }
        let dgrad = potential.gradient(x).dist(&potential.gradient(y));
        let du2: f64 = ux.sub(&uy).dot(&ux.sub(&uy));
        let mut ddu2 = 0.0;
        for i in transform.active_components() {
            let gx = transform.grad_u(i, x)?;
            let gy = transform.grad_u(i, y)?;
            ddu2 += gx.value.sub(&gy.value).dot(&gx.value.sub(&gy.value));
        }
        integrand.push(2.0 * dgrad / den + (2.0 * du2 + ddu2) / (den * den));
    }
    Ok(trapezoid_cumulative(&pair.times, &integrand))
}

/// `∫₀¹∫₀ᵀ f(αX_s + (1−α)Y_s) ds dα`: midpoint rule in `α` with `n_alpha`
/// nodes, trapezoid rule on the pair's time grid.
pub fn occupation_integral(pair: &CoupledPair, f: &dyn Fn(&CoeffVec) -> f64, n_alpha: usize) -> Result<f64> {
    if n_alpha == 0 {
        return Err(Error::param("n_alpha", 0.0, "need at least one alpha node"));
    }
    let mut total = 0.0;
    for a in 0..n_alpha {
        let alpha = (a as f64 + 0.5) / n_alpha as f64;
        let values: Vec<f64> = (0..pair.times.len()).map(|j| f(&pair.interpolate(alpha, j))).collect();
        total += *trapezoid_cumulative(&pair.times, &values).last().unwrap();
    }
    Ok(total / n_alpha as f64)
}

/// One coupled comparison: `X` at `(level_x, scheme_x)` against `Y` at
/// `(level_y, scheme_y)`, both driven by the same table and start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub level_x: u32,
    pub scheme_x: Scheme,
    pub level_y: u32,
    pub scheme_y: Scheme,
}

impl Comparison {
    pub fn label(&self) -> alloc::string::String {
        if self.scheme_x == self.scheme_y {
            format!("{}:{}v{}", self.scheme_x.label(), self.level_x, self.level_y)
        } else {
            format!("{}v{}:{}", self.scheme_x.label(), self.scheme_y.label(), self.level_x)
        }
    }
}

/// Self-refinement comparisons `(L_i, L_{i+1})` under `primary`, then one
/// cross-scheme comparison at the finest level.
pub fn refinement_plan(levels: &[u32], primary: Scheme, secondary: Option<Scheme>) -> Vec<Comparison> {
    let mut plan: Vec<Comparison> = levels
        .windows(2)
        .map(|w| Comparison { level_x: w[0], scheme_x: primary, level_y: w[1], scheme_y: primary })
        .collect();
    if let (Some(s), Some(&l)) = (secondary, levels.last()) {
        plan.push(Comparison { level_x: l, scheme_x: primary, level_y: l, scheme_y: s });
    }
    plan
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceRow {
    pub comparison: Comparison,
    pub sup_diff: f64,
    pub terminal_diff: f64,
    /// `A_T` when a transform was supplied.
    pub a_terminal: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub rows: Vec<DivergenceRow>,
}

/// Optional `A_t` evaluation inside [`coupled_uniqueness_run`].
pub struct AOptions<'a> {
    pub transform: &'a ZvonkinTransform,
    /// Approximate number of time points kept for the quadrature.
    pub points: usize,
    /// Comparison indices that get `A_T`; all when `None`.
    pub rows: Option<&'a [usize]>,
}

/// Runs each comparison on the shared `noise` and start `z`.
#[allow(clippy::too_many_arguments)]
pub fn coupled_uniqueness_run(
    model: &SpectralModel,
    potential: &dyn ConvexPotential,
    drift: &dyn BoundedDrift,
    z: &CoeffVec,
    t_end: f64,
    comparisons: &[Comparison],
    noise: &BrownianIncrements,
    a_options: Option<&AOptions<'_>>,
) -> Result<DivergenceReport> {
    let mut cache: BTreeMap<(u32, u8, u64), Path> = BTreeMap::new();
    let mut get = |level: u32, scheme: Scheme| -> Result<Path> {
        let tag = match scheme {
            Scheme::SplitImplicit => (0, 0),
            Scheme::YosidaExplicit { alpha_ratio } => (1, alpha_ratio.to_bits()),
        };
        let key = (level, tag.0, tag.1);
        if let Some(p) = cache.get(&key) {
            return Ok(p.clone());
        }
        let p = simulate_path(model, potential, drift, z, t_end, 1 << level, scheme, noise)?;
        cache.insert(key, p.clone());
        Ok(p)
    };
    let mut rows = Vec::with_capacity(comparisons.len());
    for (row, c) in comparisons.iter().enumerate() {
        let px = get(c.level_x, c.scheme_x)?;
        let py = get(c.level_y, c.scheme_y)?;
        let pair = CoupledPair::new(&px, &py)?;
        let a_terminal = match a_options {
            Some(o) if o.rows.is_none_or(|r| r.contains(&row)) => {
                let stride = ((pair.times.len() - 1) / o.points.max(1)).max(1);
                Some(*a_functional(&pair.thinned(stride), o.transform, potential)?.last().unwrap())
            }
            _ => None,
        };
        rows.push(DivergenceRow {
            comparison: *c,
            sup_diff: pair.sup_diff(),
            terminal_diff: pair.terminal_diff(),
            a_terminal,
        });
    }
    Ok(DivergenceReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use crate::potential::{ConstantDrift, PowerPotential, QuadraticPotential, SignDrift, TanhDrift, ZeroDrift, ZeroPotential};
    use alloc::sync::Arc;

    fn model(n: usize) -> SpectralModel {
        SpectralModel::dirichlet_default(n).unwrap()
    }

    #[test]
    fn coarse_increments_are_sums() {
        let w = BrownianIncrements::generate(3, 1.0, 4, StreamKey(1)).unwrap();
        let c = w.view(2).unwrap();
        assert_eq!(c.n_steps(), 4);
        for j in 0..4 {
            for k in 0..3 {
                let s: f64 = (0..4).map(|i| w.increment(4 * j + i)[k]).sum();
                assert!((c.increment(j)[k] - s).abs() < 1e-15);
            }
        }
        assert_eq!(w.view(2).unwrap(), w.coarsen().unwrap().coarsen().unwrap());
        assert!(w.view(5).is_err());
    }

    #[test]
    fn increment_variance() {
        let w = BrownianIncrements::generate(16, 2.0, 12, StreamKey(2)).unwrap();
        let h = w.step_size();
        let n = (w.n_steps() * 16) as f64;
        let var: f64 = w.table.iter().map(|v| v * v).sum::<f64>() / n;
        // Var of the sample second moment is 2h²/n
        assert!((var - h).abs() < 3.0 * h * (2.0 / n).sqrt());
    }

    #[test]
    fn refinement_consistency_is_bitwise() {
        let m = model(4);
        let p = PowerPotential::new(Arc::new(m.clone()), 3.0, 0.0).unwrap();
        let fine = BrownianIncrements::generate(4, 1.0, 7, StreamKey(3)).unwrap();
        let coarse = fine.coarsen().unwrap();
        let z = CoeffVec(vec![0.3, -0.2, 0.1, 0.0]);
        let b = SignDrift { b: 1.0 };
        let a = simulate_path(&m, &p, &b, &z, 1.0, 64, Scheme::SplitImplicit, &fine).unwrap();
        let c = simulate_path(&m, &p, &b, &z, 1.0, 64, Scheme::SplitImplicit, &coarse).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn rejects_mismatched_noise() {
        let m = model(2);
        let w = BrownianIncrements::generate(2, 1.0, 3, StreamKey(0)).unwrap();
        let z = m.zeros();
        let run = |n, t| simulate_path(&m, &ZeroPotential, &ZeroDrift, &z, t, n, Scheme::SplitImplicit, &w);
        assert!(matches!(run(16, 1.0), Err(Error::NoiseMismatch(_))));
        assert!(matches!(run(3, 1.0), Err(Error::NoiseMismatch(_))));
        assert!(matches!(run(4, 2.0), Err(Error::NoiseMismatch(_))));
        assert!(run(4, 1.0).is_ok());
    }

    #[test]
    fn blow_up_is_reported() {
        let m = model(2);
        let w = BrownianIncrements::generate(2, 1.0, 2, StreamKey(0)).unwrap();
        let b = ConstantDrift::new(CoeffVec(vec![1e12, 0.0]));
        let err = simulate_path(&m, &ZeroPotential, &b, &m.zeros(), 1.0, 4, Scheme::SplitImplicit, &w)
            .unwrap_err();
        assert!(matches!(err, Error::BlowUp { step: 1, .. }));
    }

    #[test]
    fn free_dynamics_terminal_variance() {
        let m = model(4);
        let n_paths = 10_000;
        let t = 0.1;
        let mut s2 = [0.0; 4];
        for i in 0..n_paths {
            let w = BrownianIncrements::generate(4, t, 3, StreamKey::root(1, 9).child(i)).unwrap();
            let p = simulate_path(&m, &ZeroPotential, &ZeroDrift, &m.zeros(), t, 8, Scheme::SplitImplicit, &w)
                .unwrap();
            for k in 0..4 {
                s2[k] += p.terminal()[k].powi(2);
            }
        }
        let tr = OuTransition::new(&m, t).unwrap();
        for k in 0..4 {
            let v = s2[k] / n_paths as f64;
            assert!((v / tr.var[k] - 1.0).abs() < 0.05, "mode {k}: {v} vs {}", tr.var[k]);
        }
    }

    #[test]
    fn constant_drift_one_step_mean() {
        let m = model(3);
        let (h, b) = (0.01, 0.7);
        let drift = ConstantDrift::new(CoeffVec(vec![b, 0.0, 0.0]));
        let z = CoeffVec(vec![0.4, 0.0, 0.0]);
        let n = 20_000;
        let samples: Vec<f64> = (0..n)
            .map(|i| {
                let w = BrownianIncrements::generate(3, h, 0, StreamKey(5).child(i)).unwrap();
                simulate_path(&m, &ZeroPotential, &drift, &z, h, 1, Scheme::SplitImplicit, &w).unwrap().terminal()[0]
            })
            .collect();
        let est = crate::stats::Estimate::from_samples(&samples);
        let exact = (-m.a()[0] * h).exp() * (0.4 + h * b);
        assert!(est.covers(exact, 0.0), "{est:?} vs {exact}");
    }

    #[test]
    fn split_and_explicit_agree_when_alpha_is_h() {
        let m = model(4);
        let p = PowerPotential::new(Arc::new(m.clone()), 3.0, 0.0).unwrap();
        let w = BrownianIncrements::generate(4, 1.0, 8, StreamKey(6)).unwrap();
        let z = CoeffVec(vec![0.5, 0.1, 0.0, -0.1]);
        let d = TanhDrift { b: 1.0 };
        let a = simulate_path(&m, &p, &d, &z, 1.0, 256, Scheme::SplitImplicit, &w).unwrap();
        let b = simulate_path(&m, &p, &d, &z, 1.0, 256, Scheme::YosidaExplicit { alpha_ratio: 1.0 }, &w).unwrap();
        let pair = CoupledPair::new(&a, &b).unwrap();
        assert!(pair.sup_diff() < 1e-12);
    }

    #[test]
    fn implicit_substep_is_dissipative() {
        let m = Arc::new(model(8));
        let p = PowerPotential::new(m.clone(), 3.0, 0.5).unwrap();
        for s in 0..100 {
            let x = m.sample_gamma(&mut StreamKey(700 + s).stream()).scaled(3.0);
            assert!(p.resolvent(0.01, &x).unwrap().norm() <= x.norm());
        }
    }

    #[test]
    fn girsanov_trivial_and_positive() {
        let m = model(3);
        let w = BrownianIncrements::generate(3, 1.0, 6, StreamKey(8)).unwrap();
        let z = CoeffVec(vec![0.2, 0.0, 0.1]);
        let p = simulate_path(&m, &ZeroPotential, &SignDrift { b: 1.0 }, &z, 1.0, 64, Scheme::SplitImplicit, &w).unwrap();
        assert_eq!(girsanov_weight(&p, &w, &ZeroDrift).unwrap(), 1.0);
        assert!(girsanov_weight(&p, &w, &SignDrift { b: 3.0 }).unwrap() > 0.0);
    }

    #[test]
    fn stopping_time_edges() {
        let m = model(3);
        let mp = Arc::new(m.clone());
        let v = PowerPotential::new(mp, 3.0, 0.0).unwrap();
        let w = BrownianIncrements::generate(3, 1.0, 6, StreamKey(9)).unwrap();
        let z = CoeffVec(vec![0.5, 0.2, 0.1]);
        let p = simulate_path(&m, &v, &SignDrift { b: 1.0 }, &z, 1.0, 64, Scheme::SplitImplicit, &w).unwrap();
        let zero = stopping_times(&p, 0.0);
        let h = 1.0 / 64.0;
        assert_eq!((zero.tau_b, zero.tau_v1, zero.tau_v2), (h, h, h));
        let huge = stopping_times(&p, 1e12);
        assert_eq!((huge.tau_b, huge.tau_v1, huge.tau_v2), (1.0, 1.0, 1.0));
        let a = stopping_times(&p, 10.0);
        let p2 = simulate_path(&m, &v, &SignDrift { b: 1.0 }, &z, 1.0, 64, Scheme::SplitImplicit, &w).unwrap();
        assert_eq!(a, stopping_times(&p2, 10.0));
        // ∫|∇V|² is nondecreasing
        assert!(p.diagnostics.windows(2).all(|d| d[1].int_v2 >= d[0].int_v2));
    }

    #[test]
    fn occupation_integral_edges() {
        let m = model(3);
        let w = BrownianIncrements::generate(3, 0.5, 5, StreamKey(10)).unwrap();
        let z = CoeffVec(vec![0.2, 0.0, 0.1]);
        let v = QuadraticPotential::new(1.0);
        let x = simulate_path(&m, &v, &ZeroDrift, &z, 0.5, 32, Scheme::SplitImplicit, &w).unwrap();
        let pair = CoupledPair::new(&x, &x).unwrap();
        let one = occupation_integral(&pair, &|_| 1.0, 3).unwrap();
        assert!((one - 0.5).abs() < 1e-15);
        let f = |p: &CoeffVec| p.dot(p);
        let a = occupation_integral(&pair, &f, 1).unwrap();
        let b = occupation_integral(&pair, &f, 7).unwrap();
        assert!((a - b).abs() < 1e-14);
        assert!(occupation_integral(&pair, &f, 0).is_err());
    }

    #[test]
    fn identical_runs_do_not_diverge() {
        let m = model(4);
        let v = PowerPotential::new(Arc::new(m.clone()), 3.0, 0.0).unwrap();
        let w = BrownianIncrements::generate(4, 1.0, 8, StreamKey(12)).unwrap();
        let z = CoeffVec(vec![0.1, 0.2, 0.0, 0.0]);
        let c = Comparison { level_x: 7, scheme_x: Scheme::SplitImplicit, level_y: 7, scheme_y: Scheme::SplitImplicit };
        let r = coupled_uniqueness_run(&m, &v, &SignDrift { b: 1.0 }, &z, 1.0, &[c], &w, None).unwrap();
        assert_eq!(r.rows[0].sup_diff, 0.0);
        assert_eq!(r.rows[0].terminal_diff, 0.0);
    }

    #[test]
    fn plan_shape() {
        let plan = refinement_plan(&[9, 10, 11], Scheme::SplitImplicit, Some(Scheme::YosidaExplicit { alpha_ratio: 0.5 }));
        assert_eq!(plan.len(), 3);
        assert_eq!((plan[1].level_x, plan[1].level_y), (10, 11));
        assert_eq!((plan[2].level_x, plan[2].level_y), (11, 11));
        assert_eq!(plan[2].scheme_y.label(), "yosida-explicit");
        assert_eq!(refinement_plan(&[9], Scheme::SplitImplicit, None).len(), 0);
    }
}
