//! Monte Carlo summaries. Every MC return in the crate carries a 95% CI.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    /// Half-width of the 95% confidence interval.
    pub ci: f64,
    pub n_samples: usize,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate { value, ci: 0.0, n_samples: 0 }
    }

    pub fn from_samples(samples: &[f64]) -> Self {
        let (mean, var) = mean_var(samples);
        let n = samples.len();
        let ci = if n > 1 { Z95 * libm::sqrt(var / n as f64) } else { 0.0 };
        Estimate { value: mean, ci, n_samples: n }
    }

    /// Standard error implied by the CI.
    pub fn std_err(&self) -> f64 {
        self.ci / Z95
    }

    pub fn scaled(self, c: f64) -> Self {
        Estimate { value: self.value * c, ci: self.ci * libm::fabs(c), n_samples: self.n_samples }
    }

    /// Sum of independent estimates; half-widths add in quadrature.
    pub fn plus(self, other: Estimate) -> Self {
        Estimate {
            value: self.value + other.value,
            ci: libm::sqrt(self.ci * self.ci + other.ci * other.ci),
            n_samples: self.n_samples + other.n_samples,
        }
    }

    /// `|value − target| ≤ ci + slack`.
    pub fn covers(&self, target: f64, slack: f64) -> bool {
        libm::fabs(self.value - target) <= self.ci + slack
    }
}

/// Componentwise Monte Carlo estimate of a vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VecEstimate {
    pub value: crate::spectral::CoeffVec,
    /// Per-component 95% half-widths.
    pub ci: Vec<f64>,
    pub n_samples: usize,
}

impl VecEstimate {
    /// Half-width for the Euclidean norm of the error (components combined in
    /// quadrature).
    pub fn norm_ci(&self) -> f64 {
        libm::sqrt(self.ci.iter().map(|c| c * c).sum())
    }

    pub fn component(&self, k: usize) -> Estimate {
        Estimate { value: self.value[k], ci: self.ci[k], n_samples: self.n_samples }
    }
}

/// Sample mean and unbiased variance (Welford).
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let d = x - mean;
        mean += d / (i + 1) as f64;
        m2 += d * (x - mean);
    }
    let var = if xs.len() > 1 { m2 / (xs.len() - 1) as f64 } else { 0.0 };
    (mean, var)
}

/// Median of a slice (copies; NaNs sort last).
pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v: Vec<f64> = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// One-sided binomial sign test: P[Bin(n, ½) ≥ successes].
pub fn sign_test_p(successes: usize, n: usize) -> f64 {
    let mut p = 0.0;
    for k in successes..=n {
        p += libm::exp(ln_choose(n, k) - n as f64 * core::f64::consts::LN_2);
    }
    p.min(1.0)
}

fn ln_choose(n: usize, k: usize) -> f64 {
    libm::lgamma(n as f64 + 1.0) - libm::lgamma(k as f64 + 1.0) - libm::lgamma((n - k) as f64 + 1.0)
}

/// Least-squares slope of `y` on `x`.
pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn welford_matches_two_pass() {
        let xs = [1.0, 4.0, 2.5, -3.0, 7.25];
        let m = xs.iter().sum::<f64>() / 5.0;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 4.0;
        let (wm, wv) = mean_var(&xs);
        assert!((wm - m).abs() < 1e-14 && (wv - v).abs() < 1e-12);
    }

    #[test]
    fn sign_test_values() {
        // P[Bin(10, ½) ≥ 9] = 11/1024
        assert!((sign_test_p(9, 10) - 11.0 / 1024.0).abs() < 1e-12);
        assert!((sign_test_p(0, 10) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn slope_of_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, -1.0, -3.0, -5.0];
        assert!((ls_slope(&x, &y) + 2.0).abs() < 1e-14);
    }

    #[test]
    fn median_even_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
