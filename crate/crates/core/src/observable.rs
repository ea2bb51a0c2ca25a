//! Real-valued test functions `f: H → ℝ` fed to the Monte Carlo estimators.

use crate::rng::StreamKey;
use crate::spectral::CoeffVec;

/// A function on the truncated space.
///
/// `key` addresses randomness for observables that are themselves Monte
/// Carlo estimates (nested resolvent terms); deterministic observables ignore
/// it.
pub trait Observable: Send + Sync {
    fn eval(&self, x: &CoeffVec, key: StreamKey) -> f64;

    /// `E f(m + η)` with `η ~ N(0, diag(var))`, when known in closed form.
    /// Estimators use it to integrate out the last Gaussian increment.
    fn gaussian_mean(&self, _mean: &CoeffVec, _var: &[f64]) -> Option<f64> {
        None
    }

    /// `‖f‖∞` if bounded and known.
    fn sup_norm(&self) -> Option<f64> {
        None
    }

    /// `Some(c)` when `f ≡ c`.
    fn constant_value(&self) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Constant(pub f64);

impl Observable for Constant {
    fn eval(&self, _: &CoeffVec, _: StreamKey) -> f64 {
        self.0
    }
    fn gaussian_mean(&self, _: &CoeffVec, _: &[f64]) -> Option<f64> {
        Some(self.0)
    }
    fn sup_norm(&self) -> Option<f64> {
        Some(libm::fabs(self.0))
    }
    fn constant_value(&self) -> Option<f64> {
        Some(self.0)
    }
}

/// `⟨e_{k+1}, x⟩`.
#[derive(Debug, Clone, Copy)]
pub struct Coordinate(pub usize);

impl Observable for Coordinate {
    fn eval(&self, x: &CoeffVec, _: StreamKey) -> f64 {
        x[self.0]
    }
    fn gaussian_mean(&self, m: &CoeffVec, _: &[f64]) -> Option<f64> {
        Some(m[self.0])
    }
}

/// `⟨e_{k+1}, x⟩²`.
#[derive(Debug, Clone, Copy)]
pub struct CoordinateSquare(pub usize);

impl Observable for CoordinateSquare {
    fn eval(&self, x: &CoeffVec, _: StreamKey) -> f64 {
        x[self.0] * x[self.0]
    }
    fn gaussian_mean(&self, m: &CoeffVec, var: &[f64]) -> Option<f64> {
        Some(m[self.0] * m[self.0] + var[self.0])
    }
}

/// `sgn⟨e_{k+1}, x⟩` with `sgn(0) = 0`.
#[derive(Debug, Clone, Copy)]
pub struct CoordinateSign(pub usize);

pub(crate) fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `E sgn(m + σZ)`.
pub(crate) fn gaussian_sign_mean(m: f64, var: f64) -> f64 {
    if var <= 0.0 {
        sgn(m)
    } else {
        libm::erf(m / libm::sqrt(2.0 * var))
    }
}

impl Observable for CoordinateSign {
    fn eval(&self, x: &CoeffVec, _: StreamKey) -> f64 {
        sgn(x[self.0])
    }
    fn gaussian_mean(&self, m: &CoeffVec, var: &[f64]) -> Option<f64> {
        Some(gaussian_sign_mean(m[self.0], var[self.0]))
    }
    fn sup_norm(&self) -> Option<f64> {
        Some(1.0)
    }
}

/// `1{⟨e_{k+1}, x⟩ > 0}`.
#[derive(Debug, Clone, Copy)]
pub struct PositiveIndicator(pub usize);

impl Observable for PositiveIndicator {
    fn eval(&self, x: &CoeffVec, _: StreamKey) -> f64 {
        if x[self.0] > 0.0 {
            1.0
        } else {
            0.0
        }
    }
    fn gaussian_mean(&self, m: &CoeffVec, var: &[f64]) -> Option<f64> {
        Some(0.5 * (1.0 + gaussian_sign_mean(m[self.0], var[self.0])))
    }
    fn sup_norm(&self) -> Option<f64> {
        Some(1.0)
    }
}

/// Wraps a deterministic closure.
pub struct FnObservable<F> {
    f: F,
    sup: Option<f64>,
}

impl<F: Fn(&CoeffVec) -> f64 + Send + Sync> FnObservable<F> {
    pub fn new(f: F) -> Self {
        FnObservable { f, sup: None }
    }

    pub fn bounded(f: F, sup: f64) -> Self {
        FnObservable { f, sup: Some(sup) }
    }
}

impl<F: Fn(&CoeffVec) -> f64 + Send + Sync> Observable for FnObservable<F> {
    fn eval(&self, x: &CoeffVec, _: StreamKey) -> f64 {
        (self.f)(x)
    }
    fn sup_norm(&self) -> Option<f64> {
        self.sup
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn sign_convention_at_zero() {
        let key = StreamKey(0);
        assert_eq!(CoordinateSign(0).eval(&CoeffVec(vec![0.0]), key), 0.0);
        assert_eq!(CoordinateSign(0).eval(&CoeffVec(vec![-2.0]), key), -1.0);
    }

    #[test]
    fn gaussian_means() {
        let m = CoeffVec(vec![0.3, -0.1]);
        let v = [0.04, 0.09];
        assert!((CoordinateSquare(1).gaussian_mean(&m, &v).unwrap() - 0.1).abs() < 1e-15);
        // E sgn(0.3 + 0.2 Z) = 2Φ(1.5) − 1
        let e = CoordinateSign(0).gaussian_mean(&m, &v).unwrap();
        assert!((e - 0.866_385_597_462_284).abs() < 1e-12);
        let p = PositiveIndicator(0).gaussian_mean(&CoeffVec(vec![0.0]), &[1.0]).unwrap();
        assert!((p - 0.5).abs() < 1e-15);
        assert_eq!(CoordinateSign(0).gaussian_mean(&CoeffVec(vec![-1.0]), &[0.0]), Some(-1.0));
    }
}
