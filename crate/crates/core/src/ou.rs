//! Exact Ornstein–Uhlenbeck transitions for `dZ = (A − ω)Z dt + dW` and the
//! Monte Carlo Mehler semigroup / resolvent built on them.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::observable::Observable;
use crate::rng::{self, Stream, StreamKey};
use crate::spectral::{CoeffVec, SpectralModel};
use crate::stats::Estimate;

/// Per-mode decay `e^{−a_k t}` and stochastic-convolution variance
/// `(1 − e^{−2a_k t})/(2a_k)` over a step of length `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct OuTransition {
    pub t: f64,
    pub decay: Vec<f64>,
    pub var: Vec<f64>,
}

impl OuTransition {
    pub fn new(model: &SpectralModel, t: f64) -> Result<Self> {
        Self::with_shift(model, t, 0.0)
    }

    /// Transition of the shifted generator with rates `a_k + omega`.
    pub fn with_shift(model: &SpectralModel, t: f64, omega: f64) -> Result<Self> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::param("t", t, "step length must be positive and finite"));
        }
        Ok(Self::rates(model.a().iter().map(|a| a + omega), t))
    }

    pub(crate) fn rates(rates: impl Iterator<Item = f64>, t: f64) -> Self {
        let mut decay = Vec::new();
        let mut var = Vec::new();
        for r in rates {
            decay.push(libm::exp(-r * t));
            var.push(-libm::expm1(-2.0 * r * t) / (2.0 * r));
        }
        OuTransition { t, decay, var }
    }

    /// Conditional mean `e^{tA} x`.
    pub fn mean(&self, x: &CoeffVec) -> CoeffVec {
        CoeffVec(x.iter().zip(&self.decay).map(|(v, d)| v * d).collect())
    }

    /// `e^{tA}x + η`, `η_k ~ N(0, var_k)`.
    pub fn sample(&self, x: &CoeffVec, rng: &mut Stream) -> CoeffVec {
        CoeffVec(
            x.iter()
                .zip(self.decay.iter().zip(&self.var))
                .map(|(v, (d, s2))| d * v + libm::sqrt(*s2) * rng::normal(rng))
                .collect(),
        )
    }
}

/// One exact OU step of length `h`.
pub fn ou_step(model: &SpectralModel, x: &CoeffVec, h: f64, rng: &mut Stream) -> Result<CoeffVec> {
    model.check_dim(x)?;
    Ok(OuTransition::new(model, h)?.sample(x, rng))
}

fn finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite)
    }
}

/// Monte Carlo Mehler formula `P_t f(x) = ∫ f(e^{tA}x + y) N_{Q_t}(dy)`.
///
/// Sample `i` uses `key.child(i)`.
pub fn mehler_apply(
    model: &SpectralModel,
    f: &dyn Observable,
    t: f64,
    x: &CoeffVec,
    n_samples: usize,
    key: StreamKey,
) -> Result<Estimate> {
    model.check_dim(x)?;
    if n_samples == 0 {
        return Err(Error::param("n_samples", 0.0, "need at least one sample"));
    }
    let tr = OuTransition::new(model, t)?;
    let samples = (0..n_samples)
        .map(|i| {
            let sk = key.child(i as u64);
            let y = tr.sample(x, &mut sk.stream());
            finite(f.eval(&y, sk.child(u64::MAX)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Estimate::from_samples(&samples))
}

/// OU resolvent `R(λ)f(x) = ∫₀^∞ e^{−λt} P_t f(x) dt` by exponential time
/// randomization: `τ ~ Exp(λ)`, average `λ⁻¹ f(Z_τ)`.
pub fn ou_resolvent(
    model: &SpectralModel,
    f: &dyn Observable,
    lambda: f64,
    x: &CoeffVec,
    n_samples: usize,
    key: StreamKey,
) -> Result<Estimate> {
    Ok(Estimate::from_samples(&ou_resolvent_samples(model, 0.0, f, lambda, x, n_samples, key)?))
}

/// Per-sample contributions of [`ou_resolvent`] for the rate-shifted
/// generator; sample `i` depends only on `key.child(i)`.
pub(crate) fn ou_resolvent_samples(
    model: &SpectralModel,
    omega: f64,
    f: &dyn Observable,
    lambda: f64,
    x: &CoeffVec,
    n_samples: usize,
    key: StreamKey,
) -> Result<Vec<f64>> {
    model.check_dim(x)?;
    if !(lambda > 0.0) {
        return Err(Error::param("lambda", lambda, "resolvent rate must be positive"));
    }
    if n_samples == 0 {
        return Err(Error::param("n_samples", 0.0, "need at least one sample"));
    }
    let inv = 1.0 / lambda;
    if let Some(c) = f.constant_value() {
        return Ok(alloc::vec![c * inv; n_samples]);
    }
    (0..n_samples)
        .map(|i| {
            let sk = key.child(i as u64);
            let mut rng = sk.stream();
            let tau = rng::exponential(&mut rng, lambda);
            let tr = OuTransition::rates(model.a().iter().map(|a| a + omega), tau);
            let z = tr.sample(x, &mut rng);
            finite(inv * f.eval(&z, sk.child(u64::MAX)))
        })
        .collect()
}
