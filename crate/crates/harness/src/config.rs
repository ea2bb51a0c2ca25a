//! TOML run configuration. Unknown keys are rejected; every error names the
//! offending line.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub model: ModelSection,
    pub potential: PotentialSection,
    pub drift: DriftSection,
    pub dynamics: DynamicsSection,
    pub experiment: ExperimentSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub out: PathBuf,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub n_modes: usize,
    /// Collocation points; `4·n_modes` when absent.
    pub grid_points: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PotentialKind {
    Zero,
    Quadratic,
    Power,
    Resolvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PotentialSection {
    pub kind: PotentialKind,
    /// Exponent of `∫|x(ξ)|^{m+1} dξ` (power, and the inner `φ` of resolvent).
    pub m: f64,
    pub omega: f64,
    /// Rate of the OU resolvent smoothing `φ` (resolvent kind).
    pub lambda: f64,
    /// Fixed sample count of the resolvent potential.
    pub samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriftKind {
    Zero,
    Constant,
    Sign,
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriftSection {
    pub kind: DriftKind,
    pub b: f64,
    /// Coefficients of the constant drift; `b·e_1` when absent.
    pub c: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    SplitImplicit,
    YosidaExplicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsSection {
    pub t_end: f64,
    pub n_steps_log2: u32,
    pub scheme: SchemeKind,
    /// `α/h` for the explicit Yosida scheme.
    pub alpha_ratio: f64,
    /// Initial coefficients; zero when absent.
    pub x0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    /// Independent paths or seeds.
    pub ensemble: usize,
    /// Dyadic levels `L` (`2^L` steps) compared by `uniqueness`; a repeated
    /// level compares a run with itself.
    pub levels: Vec<u32>,
    /// Second scheme for cross-scheme rows; none when absent.
    pub cross_scheme: Option<SchemeKind>,
    pub cross_alpha_ratio: f64,
    /// Evaluate `A_T` with a built transform.
    pub a_functional: bool,
    /// Time thinning of the `A_T` quadrature.
    pub a_points: usize,
    pub n_alpha: usize,
    pub lambdas: Vec<f64>,
    /// Overrides the automatic choice of `λ` for the transform.
    pub lambda: Option<f64>,
    /// Monte Carlo paths per resolvent evaluation.
    pub paths: usize,
    /// Neumann-series depth.
    pub depth: usize,
    pub n0: usize,
    pub max_paths: usize,
    pub dt: f64,
    /// Sampled pairs for Lipschitz checks.
    pub pairs: usize,
    /// Sampled points for pointwise checks.
    pub points: usize,
    pub nu_samples: usize,
    /// Modes checked by `invariants`; all of them, at most 8, when unset.
    pub check_modes: Option<usize>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection { seed: 0, out: PathBuf::from("out"), workers: 1 }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { n_modes: 8, grid_points: None }
    }
}

impl Default for PotentialSection {
    fn default() -> Self {
        PotentialSection { kind: PotentialKind::Zero, m: 3.0, omega: 0.0, lambda: 1.0, samples: 64 }
    }
}

impl Default for DriftSection {
    fn default() -> Self {
        DriftSection { kind: DriftKind::Zero, b: 0.0, c: None }
    }
}

impl Default for DynamicsSection {
    fn default() -> Self {
        DynamicsSection { t_end: 1.0, n_steps_log2: 8, scheme: SchemeKind::SplitImplicit, alpha_ratio: 1.0, x0: None }
    }
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            ensemble: 1,
            levels: vec![9, 10, 11, 12],
            cross_scheme: None,
            cross_alpha_ratio: 0.5,
            a_functional: false,
            a_points: 16,
            n_alpha: 8,
            lambdas: vec![1.0, 4.0, 16.0, 64.0],
            lambda: None,
            paths: 256,
            depth: 1,
            n0: 128,
            max_paths: 1 << 20,
            dt: 1.0 / 128.0,
            pairs: 200,
            points: 100,
            nu_samples: 200,
            check_modes: None,
        }
    }
}

/// A semantic problem at `[section].key`.
struct Invalid {
    section: &'static str,
    key: &'static str,
    message: String,
}

fn invalid(section: &'static str, key: &'static str, message: impl Into<String>) -> Invalid {
    Invalid { section, key, message: message.into() }
}

/// 1-based line of `key` inside `[section]`, if written explicitly.
fn locate(src: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, line) in src.lines().enumerate() {
        let t = line.trim();
        if let Some(rest) = t.strip_prefix('[') {
            current = rest.trim_end_matches(']').trim().to_string();
            continue;
        }
        let name = t.split('=').next().unwrap_or("").trim();
        if current == section && name == key {
            return Some(i + 1);
        }
    }
    None
}

fn byte_to_line(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].bytes().filter(|b| *b == b'\n').count() + 1
}

impl RunConfig {
    /// Parses and validates TOML text.
    pub fn from_toml(src: &str) -> Result<Self, HarnessError> {
        let cfg: RunConfig = toml::from_str(src).map_err(|e| {
            let line = e.span().map(|s| byte_to_line(src, s.start));
            let msg = e.message().trim().to_string();
            match line {
                Some(l) => HarnessError::Config(format!("line {l}: {msg}")),
                None => HarnessError::Config(msg),
            }
        })?;
        cfg.validate().map_err(|v| {
            let at = match locate(src, v.section, v.key) {
                Some(l) => format!("line {l}: "),
                None => String::new(),
            };
            HarnessError::Config(format!("{at}[{}].{}: {}", v.section, v.key, v.message))
        })?;
        Ok(cfg)
    }

    /// Validation without source positions, for configs built in code or
    /// altered by command-line flags.
    pub fn check(&self) -> Result<(), HarnessError> {
        self.validate().map_err(|v| HarnessError::Config(format!("[{}].{}: {}", v.section, v.key, v.message)))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn validate(&self) -> Result<(), Invalid> {
        if self.run.workers == 0 {
            return Err(invalid("run", "workers", "must be at least 1"));
        }
        let n = self.model.n_modes;
        if n == 0 {
            return Err(invalid("model", "n_modes", "must be at least 1"));
        }
        if let Some(m) = self.model.grid_points {
            if m < 2 * n {
                return Err(invalid("model", "grid_points", format!("must be at least 2·n_modes = {}", 2 * n)));
            }
        }
        let p = &self.potential;
        if matches!(p.kind, PotentialKind::Power | PotentialKind::Resolvent) && !(p.m >= 1.0) {
            return Err(invalid("potential", "m", "exponent must be >= 1"));
        }
        if !(p.omega >= 0.0) {
            return Err(invalid("potential", "omega", "shift must be nonnegative"));
        }
        if p.kind == PotentialKind::Resolvent {
            if !(p.lambda > 0.0) {
                return Err(invalid("potential", "lambda", "must be positive"));
            }
            if p.samples == 0 {
                return Err(invalid("potential", "samples", "must be positive"));
            }
        }
        let d = &self.drift;
        if !d.b.is_finite() {
            return Err(invalid("drift", "b", "must be finite"));
        }
        if let Some(c) = &d.c {
            if d.kind != DriftKind::Constant {
                return Err(invalid("drift", "c", "only valid for kind = \"constant\""));
            }
            if c.len() != n {
                return Err(invalid("drift", "c", format!("expected {n} coefficients, got {}", c.len())));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(invalid("drift", "c", "coefficients must be finite"));
            }
        }
        let dy = &self.dynamics;
        if !(dy.t_end > 0.0) || !dy.t_end.is_finite() {
            return Err(invalid("dynamics", "t_end", "must be positive and finite"));
        }
        if dy.n_steps_log2 > 24 {
            return Err(invalid("dynamics", "n_steps_log2", "at most 24"));
        }
        if !(dy.alpha_ratio > 0.0) {
            return Err(invalid("dynamics", "alpha_ratio", "must be positive"));
        }
        if let Some(x0) = &dy.x0 {
            if x0.len() != n {
                return Err(invalid("dynamics", "x0", format!("expected {n} coefficients, got {}", x0.len())));
            }
        }
        let e = &self.experiment;
        if e.ensemble == 0 {
            return Err(invalid("experiment", "ensemble", "must be at least 1"));
        }
        if e.levels.is_empty() || e.levels.iter().any(|l| *l > 20) {
            return Err(invalid("experiment", "levels", "need at least one level, each at most 20"));
        }
        if e.levels.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid("experiment", "levels", "must be nondecreasing"));
        }
        if !(e.cross_alpha_ratio > 0.0) {
            return Err(invalid("experiment", "cross_alpha_ratio", "must be positive"));
        }
        if e.a_points == 0 {
            return Err(invalid("experiment", "a_points", "must be positive"));
        }
        if e.n_alpha == 0 {
            return Err(invalid("experiment", "n_alpha", "must be positive"));
        }
        if e.lambdas.is_empty() || e.lambdas.iter().any(|l| !(*l > 0.0)) {
            return Err(invalid("experiment", "lambdas", "need positive values"));
        }
        if let Some(l) = e.lambda {
            if !(l > 0.0) {
                return Err(invalid("experiment", "lambda", "must be positive"));
            }
        }
        for (key, v) in [("paths", e.paths), ("n0", e.n0), ("pairs", e.pairs), ("points", e.points), ("nu_samples", e.nu_samples)] {
            if v == 0 {
                return Err(invalid("experiment", key, "must be positive"));
            }
        }
        if !(e.dt > 0.0) {
            return Err(invalid("experiment", "dt", "must be positive"));
        }
        if e.check_modes.is_some_and(|k| k == 0 || k > n) {
            return Err(invalid("experiment", "check_modes", format!("must lie in 1..={n}")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
        assert_eq!(RunConfig::from_toml("").unwrap(), c);
    }

    #[test]
    fn unknown_key_names_line() {
        let err = RunConfig::from_toml("[model]\nn_modes = 4\nbogus = 1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn semantic_error_names_line() {
        let src = "[run]\nseed = 1\n\n[model]\nn_modes = 4\ngrid_points = 5\n";
        let msg = RunConfig::from_toml(src).unwrap_err().to_string();
        assert!(msg.contains("line 6") && msg.contains("grid_points"), "{msg}");
    }

    #[test]
    fn type_error_names_line() {
        let msg = RunConfig::from_toml("[dynamics]\nt_end = \"long\"\n").unwrap_err().to_string();
        assert!(msg.contains("line 2"), "{msg}");
    }
}
