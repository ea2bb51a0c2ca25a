//! The acceptance suite: eleven pass/fail criteria, each a self-contained
//! experiment with its own stream root.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde_json::json;
use zvonkin_core::integrators::{refinement_plan, simulate_path, BrownianIncrements, Scheme};
use zvonkin_core::observable::CoordinateSign;
use zvonkin_core::ou::{ou_step, OuTransition};
use zvonkin_core::potential::{
    BoundedDrift, ConvexPotential, NegatedDrift, PowerPotential, QuadraticPotential, SignDrift, TanhDrift,
};
use zvonkin_core::integrators::girsanov_weight;
use zvonkin_core::rng::StreamKey;
use zvonkin_core::stats::Estimate;
use zvonkin_core::zvonkin::{
    build_transform, nonlinear_resolvent, regularity_scaling_check, Budget, ResolventEstimator, TransformOptions,
};
use zvonkin_core::{CoeffVec, SpectralModel};

use crate::commands::{
    probe_transform, resolvent_ratios, round_trip_error, sample_pair, sample_point, stationary_moments, t_lambda_sup,
    transform_checks, uniqueness_ensemble, unit_observable, Command, Outcome,
};
use crate::config::{DriftKind, PotentialKind, RunConfig, SchemeKind};
use crate::error::{HResult, HarnessError};
use crate::output::{header, load_config, sci, Check, RunDir, RunManifest, MANIFEST};
use crate::setup::{experiment, Setup};

/// Wall-clock budget of the whole suite, seconds.
pub const SUITE_BUDGET_S: f64 = 900.0;

pub const CRITERIA: [(usize, &str); 11] = [
    (1, "ou-exactness"),
    (2, "gamma-covariance"),
    (3, "stationary-quadratic"),
    (4, "yosida-suite"),
    (5, "resolvent-mass-lipschitz"),
    (6, "t-lambda-contraction"),
    (7, "transform-bounds"),
    (8, "girsanov"),
    (9, "pathwise-uniqueness"),
    (10, "regularity-scaling"),
    (11, "determinism"),
];

pub struct Ctx {
    pub seed: u64,
    /// Scratch space for criteria that run whole commands.
    pub out: PathBuf,
    pub started: Instant,
}

#[derive(Debug, Clone)]
pub struct CriterionResult {
    pub id: usize,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!(
            "{} [{:>2}] {}: {} ({:.1}s)",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.seconds
        )
    }
}

fn key(ctx: &Ctx, id: usize) -> StreamKey {
    StreamKey::root(ctx.seed, experiment::ACCEPTANCE + id as u64)
}

/// Folds sub-checks into one verdict.
fn verdict(checks: &[Check]) -> (bool, String) {
    let pass = checks.iter().all(|c| c.pass);
    let detail = checks
        .iter()
        .map(|c| format!("{}{}: {}", if c.pass { "" } else { "FAILED " }, c.name, c.detail))
        .collect::<Vec<_>>()
        .join("; ");
    (pass, detail)
}

pub fn run_criterion(id: usize, ctx: &Ctx) -> CriterionResult {
    let t0 = Instant::now();
    let name = CRITERIA.iter().find(|c| c.0 == id).map_or("unknown", |c| c.1);
    let checks = match id {
        1 => c1_ou_exactness(ctx),
        2 => c2_gamma_covariance(ctx),
        3 => c3_stationary(ctx),
        4 => c4_yosida(ctx),
        5 => c5_resolvent(ctx),
        6 => c6_t_lambda(ctx),
        7 => c7_transform(ctx),
        8 => c8_girsanov(ctx),
        9 => c9_uniqueness(ctx),
        10 => c10_scaling(ctx),
        11 => c11_determinism(ctx),
        _ => Err(HarnessError::Config(format!("no criterion {id}"))),
    };
    let (pass, detail) = match checks {
        Ok(c) => verdict(&c),
        Err(e) => (false, format!("error: {e}")),
    };
    CriterionResult { id, name, pass, detail, seconds: t0.elapsed().as_secs_f64() }
}

/// Runs every criterion in order, reporting each as it finishes.
pub fn run_all(ctx: &Ctx, mut report: impl FnMut(&CriterionResult)) -> Vec<CriterionResult> {
    CRITERIA
        .iter()
        .map(|(id, _)| {
            let r = run_criterion(*id, ctx);
            report(&r);
            r
        })
        .collect()
}

pub fn cmd_acceptance(cfg: &RunConfig, dir: &mut RunDir) -> HResult<Outcome> {
    let ctx = Ctx { seed: cfg.run.seed, out: dir.path().join("scratch"), started: Instant::now() };
    let results = run_all(&ctx, |r| eprintln!("{}", r.line()));
    dir.write_csv(
        "acceptance.csv",
        &header(&["criterion", "name", "pass", "seconds", "detail"]),
        results.iter().map(|r| {
            vec![r.id.to_string(), r.name.to_string(), r.pass.to_string(), format!("{:.1}", r.seconds), r.detail.clone()]
        }),
    )?;
    let checks: Vec<Check> =
        results.iter().map(|r| Check::new(format!("criterion-{}-{}", r.id, r.name), r.pass, r.detail.clone())).collect();
    let passed = results.iter().filter(|r| r.pass).count();
    Ok(Outcome { summary: json!({ "passed": passed, "total": results.len() }), checks })
}

fn model(n: usize) -> HResult<Arc<SpectralModel>> {
    Ok(Arc::new(SpectralModel::dirichlet_default(n)?))
}

// 1. Exact OU transitions: per-mode moments of 10⁵ one-step replicates.
fn c1_ou_exactness(ctx: &Ctx) -> HResult<Vec<Check>> {
    let t0 = Instant::now();
    let m = model(16)?;
    let (t, n) = (0.01, 100_000usize);
    let x = CoeffVec((1..=16).map(|k| 1.0 / k as f64).collect());
    let k = key(ctx, 1);
    let samples = (0..n)
        .into_par_iter()
        .map(|i| ou_step(&m, &x, t, &mut k.child(i as u64).stream()))
        .collect::<Result<Vec<_>, _>>()?;
    let tr = OuTransition::new(&m, t)?;
    let mut worst_mean = 0.0f64;
    let mut worst_var = 0.0f64;
    for j in 0..16 {
        let col: Vec<f64> = samples.iter().map(|s| s[j]).collect();
        let e = Estimate::from_samples(&col);
        let var = zvonkin_core::stats::mean_var(&col).1;
        let sd_mean = (tr.var[j] / n as f64).sqrt();
        let sd_var = tr.var[j] * (2.0 / (n - 1) as f64).sqrt();
        worst_mean = worst_mean.max((e.value - tr.decay[j] * x[j]).abs() / sd_mean);
        worst_var = worst_var.max((var - tr.var[j]).abs() / sd_var);
    }
    let secs = t0.elapsed().as_secs_f64();
    Ok(vec![
        Check::new("mean", worst_mean <= 3.0, format!("max z-score {worst_mean:.2}")),
        Check::new("variance", worst_var <= 3.0, format!("max z-score {worst_var:.2}")),
        Check::new("runtime", secs < 30.0, format!("{secs:.1}s")),
    ])
}

// 2. Covariance kernel of γ against ½(min(s,t) − st).
fn c2_gamma_covariance(ctx: &Ctx) -> HResult<Vec<Check>> {
    let n_modes = 1024;
    let m = model(n_modes)?;
    let pts: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
    let mut pairs: Vec<(usize, usize)> = (0..9).map(|i| (i, i)).collect();
    pairs.extend((0..9).map(|i| (i, (i + 4) % 9)));
    pairs.extend([(0, 8), (1, 6)]);
    // basis values √2 sin(kπξ) at the probe points
    let basis: Vec<Vec<f64>> = pts
        .iter()
        .map(|xi| (1..=n_modes).map(|k| 2f64.sqrt() * (k as f64 * PI * xi).sin()).collect())
        .collect();
    let n = 100_000usize;
    let k = key(ctx, 2);
    let values: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x = m.sample_gamma(&mut k.child(i as u64).stream());
            basis.iter().map(|b| b.iter().zip(x.iter()).map(|(u, v)| u * v).sum()).collect()
        })
        .collect();
    let mut worst = 0.0f64;
    let mut worst_abs = 0.0f64;
    for &(a, b) in &pairs {
        let (s, t) = (pts[a], pts[b]);
        let prod: Vec<f64> = values.iter().map(|v| v[a] * v[b]).collect();
        let e = Estimate::from_samples(&prod);
        let ma = values.iter().map(|v| v[a]).sum::<f64>() / n as f64;
        let mb = values.iter().map(|v| v[b]).sum::<f64>() / n as f64;
        let cov = e.value - ma * mb;
        let exact = 0.5 * (s.min(t) - s * t);
        worst = worst.max((cov - exact).abs() / e.std_err());
        worst_abs = worst_abs.max((cov - exact).abs());
    }
    Ok(vec![Check::new(
        "covariance",
        worst < 4.0,
        format!("max |error| {worst_abs:.2e} = {worst:.2} MC sigma over {} pairs, N = {n_modes}", pairs.len()),
    )])
}

// 3. Long-run variance under V = |x|²/2 against 1/(2(a_k + 1)).
fn c3_stationary(ctx: &Ctx) -> HResult<Vec<Check>> {
    let mut cfg = RunConfig::default();
    cfg.run.seed = ctx.seed;
    cfg.model.n_modes = 8;
    cfg.potential.kind = PotentialKind::Quadratic;
    cfg.potential.omega = 1.0;
    cfg.dynamics.t_end = 1.0;
    cfg.dynamics.n_steps_log2 = 8;
    cfg.experiment.ensemble = 10_000;
    cfg.experiment.check_modes = Some(8);
    let s = Setup::from_config(&cfg)?;
    let moments = stationary_moments(&cfg, &s, key(ctx, 3))?;
    let worst = moments.iter().map(|m| (m.empirical.value / m.oracle.value - 1.0).abs()).fold(0.0, f64::max);
    Ok(vec![Check::new("variance-5pct", worst <= 0.05, format!("max relative error {worst:.4} over k <= 8"))])
}

fn smooth_point(m: &SpectralModel, key: StreamKey, scale: f64) -> CoeffVec {
    sample_point(m, key).scaled(scale)
}

// 4. Yosida resolvent and drift properties for m = 3.
fn c4_yosida(ctx: &Ctx) -> HResult<Vec<Check>> {
    let m = model(16)?;
    let v = PowerPotential::new(m.clone(), 3.0, 0.0)?;
    let k = key(ctx, 4);
    let alpha_of = |i: u64| 10f64.powf(-3.0 + 3.0 * zvonkin_core::rng::uniform(&mut k.child(3).child(i).stream()));

    let pair_worst = (0..1000u64)
        .into_par_iter()
        .map(|i| {
            let x = smooth_point(&m, k.child(0).child(i), 4.0);
            let y = smooth_point(&m, k.child(1).child(i), 4.0);
            let alpha = alpha_of(i);
            let (jx, jy) = (v.resolvent(alpha, &x)?, v.resolvent(alpha, &y)?);
            let (fx, fy) = (v.yosida_drift(alpha, &x)?, v.yosida_drift(alpha, &y)?);
            let d = x.dist(&y);
            let expand = jx.dist(&jy) - d;
            let mono = fx.sub(&fy).dot(&x.sub(&y));
            Ok((expand / d, mono / (d * d)))
        })
        .collect::<Result<Vec<_>, zvonkin_core::Error>>()?;
    let expand = pair_worst.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let mono = pair_worst.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);

    let ratio = (0..1000u64)
        .into_par_iter()
        .map(|i| {
            let x = smooth_point(&m, k.child(2).child(i), 4.0);
            let g = v.gradient(&x).norm();
            Ok(if g == 0.0 { 0.0 } else { v.yosida_drift(alpha_of(i), &x)?.norm() / g })
        })
        .collect::<Result<Vec<f64>, zvonkin_core::Error>>()?
        .into_iter()
        .fold(0.0, f64::max);

    let mut monotone = true;
    let mut last_seq = Vec::new();
    for i in 0..10u64 {
        let x = smooth_point(&m, k.child(4).child(i), 2.0);
        let g = v.gradient(&x);
        let seq = (4..=12)
            .map(|j| Ok(v.yosida_drift(2f64.powi(-j), &x)?.add(&g).norm()))
            .collect::<Result<Vec<f64>, zvonkin_core::Error>>()?;
        monotone &= seq.windows(2).all(|w| w[1] < w[0]);
        last_seq = seq;
    }
    Ok(vec![
        Check::new("resolvent-nonexpansive", expand <= 1e-12, format!("max (|Jx-Jy|-|x-y|)/|x-y| = {expand:.2e}")),
        Check::new("drift-monotone", mono <= 1e-12, format!("max <F x - F y, x - y>/|x-y|^2 = {mono:.3e}")),
        Check::new("drift-below-gradient", ratio <= 1.0 + 1e-9, format!("max |F_alpha|/|grad V| = {ratio:.6}")),
        Check::new(
            "alpha-halving-monotone",
            monotone,
            format!("j = 4..12 errors {:.2e} .. {:.2e}", last_seq[0], last_seq[last_seq.len() - 1]),
        ),
    ])
}

fn power_estimator(m: &Arc<SpectralModel>, lambda: f64, paths: usize, key: StreamKey) -> HResult<ResolventEstimator> {
    let v: Arc<dyn ConvexPotential> = Arc::new(PowerPotential::new(m.clone(), 3.0, 0.0)?);
    Ok(ResolventEstimator::new(m.clone(), v, lambda, paths, key)?)
}

// 5. R_λ1 = 1/λ and the √(π/λ)‖f‖∞ Lipschitz bound for a sign observable.
fn c5_resolvent(ctx: &Ctx) -> HResult<Vec<Check>> {
    let m = model(8)?;
    let k = key(ctx, 5);
    let pairs: Vec<_> = (0..200u64).map(|i| sample_pair(&m, k.child(0).child(i))).collect();
    let mut checks = Vec::new();
    for (j, lambda) in [4.0, 16.0].into_iter().enumerate() {
        let est = power_estimator(&m, lambda, 400, k.child(1).child(j as u64))?;
        let mass = nonlinear_resolvent(&est, &unit_observable(), &pairs[0].0)?;
        checks.push(Check::new(
            format!("mass[lambda={lambda}]"),
            (mass.value - 1.0 / lambda).abs() <= mass.ci + 1e-12,
            format!("{} vs {} (ci {:.1e})", mass.value, 1.0 / lambda, mass.ci),
        ));
        let bound = (PI / lambda).sqrt();
        let ratios = resolvent_ratios(&est, &CoordinateSign(0), &pairs)?;
        let worst = ratios.iter().map(|(r, ci)| r - 3.0 * ci - bound).fold(f64::NEG_INFINITY, f64::max);
        let max_ratio = ratios.iter().map(|r| r.0).fold(0.0, f64::max);
        checks.push(Check::new(
            format!("lipschitz[lambda={lambda}]"),
            worst <= 0.0,
            format!("max ratio {max_ratio:.4} vs {bound:.4}"),
        ));
    }
    Ok(checks)
}

// 6. |T_λφ| ≤ ½‖φ‖∞ at λ = 4πb², b = 1.
fn c6_t_lambda(ctx: &Ctx) -> HResult<Vec<Check>> {
    let m = model(8)?;
    let k = key(ctx, 6);
    let b = 1.0;
    let est = power_estimator(&m, 4.0 * PI * b * b, 1000, k.child(0))?;
    let points: Vec<_> = (0..100u64).map(|i| sample_point(&m, k.child(1).child(i))).collect();
    let t = t_lambda_sup(&est, &SignDrift { b }, &CoordinateSign(0), &points)?;
    let worst = t.iter().map(|v| v.value.abs() - 3.0 * v.ci - 0.5).fold(f64::NEG_INFINITY, f64::max);
    let sup = t.iter().map(|v| v.value.abs()).fold(0.0, f64::max);
    Ok(vec![Check::new("sup-bound", worst <= 0.0, format!("sup |T phi| = {sup:.4} vs 0.5 over 100 points"))])
}

// 7. Transform at N = 8, m = 3, b = ½.
fn c7_transform(ctx: &Ctx) -> HResult<Vec<Check>> {
    let m = model(8)?;
    let k = key(ctx, 7);
    let v: Arc<dyn ConvexPotential> = Arc::new(PowerPotential::new(m.clone(), 3.0, 0.0)?);
    let drift: Arc<dyn BoundedDrift> = Arc::new(TanhDrift { b: 0.5 });
    let opts = TransformOptions { depth: 1, budget: Budget { n0: 128, max_paths: 1 << 20 }, ..Default::default() };
    let t = build_transform(m.clone(), v, drift, &opts, k.child(0))?;
    let pairs: Vec<_> = (0..200u64).map(|i| sample_pair(&m, k.child(1).child(i))).collect();
    let probes = probe_transform(&t, &pairs)?;
    let mut checks = transform_checks(&t, &probes);
    let points: Vec<_> = (0..20u64).map(|i| sample_point(&m, k.child(2).child(i))).collect();
    let rt = round_trip_error(&t, &points)?;
    checks.push(Check::new("phi-round-trip", rt <= 1e-8, format!("max {rt:.2e} at lambda = {}", t.lambda())));
    Ok(checks)
}

// 8. E[ρ_T] = 1 and E f(X^B_T) = E[ρ^{−B} f(X⁰_T)] for f = ⟨e_1,·⟩².
fn c8_girsanov(ctx: &Ctx) -> HResult<Vec<Check>> {
    let m = model(8)?;
    let k = key(ctx, 8);
    let v = PowerPotential::new(m.clone(), 3.0, 0.0)?;
    let drift = SignDrift { b: 1.0 };
    let free = zvonkin_core::potential::ZeroDrift;
    let (t_end, level) = (1.0, 9u32);
    let z = CoeffVec::unit(8, 0).scaled(0.1);
    let rows = (0..10_000u64)
        .into_par_iter()
        .map(|i| {
            let noise = BrownianIncrements::generate(8, t_end, level, k.child(i))?;
            let xb = simulate_path(&m, &v, &drift, &z, t_end, 1 << level, Scheme::SplitImplicit, &noise)?;
            let x0 = simulate_path(&m, &v, &free, &z, t_end, 1 << level, Scheme::SplitImplicit, &noise)?;
            let rho = girsanov_weight(&xb, &noise, &drift)?;
            let back = girsanov_weight(&x0, &noise, &NegatedDrift(&drift))?;
            Ok((rho, xb.terminal()[0].powi(2), back * x0.terminal()[0].powi(2)))
        })
        .collect::<Result<Vec<_>, zvonkin_core::Error>>()?;
    let rho = Estimate::from_samples(&rows.iter().map(|r| r.0).collect::<Vec<_>>());
    let direct = Estimate::from_samples(&rows.iter().map(|r| r.1).collect::<Vec<_>>());
    let weighted = Estimate::from_samples(&rows.iter().map(|r| r.2).collect::<Vec<_>>());
    let z_rho = (rho.value - 1.0).abs() / rho.std_err();
    Ok(vec![
        Check::new("mean-weight", z_rho <= 3.0, format!("E rho = {:.4} ({z_rho:.2} sigma)", rho.value)),
        Check::new(
            "weak-identity",
            (direct.value - weighted.value).abs() <= direct.ci + weighted.ci,
            format!(
                "{:.5} +- {:.5} vs reweighted {:.5} +- {:.5}",
                direct.value, direct.ci, weighted.value, weighted.ci
            ),
        ),
    ])
}

// 9. Coupled refinements with a sign drift: shrinking differences, finite A_T.
fn c9_uniqueness(ctx: &Ctx) -> HResult<Vec<Check>> {
    let mut cfg = RunConfig::default();
    cfg.run.seed = ctx.seed;
    cfg.model.n_modes = 8;
    cfg.potential.kind = PotentialKind::Power;
    cfg.potential.m = 3.0;
    cfg.drift.kind = DriftKind::Sign;
    cfg.drift.b = 1.0;
    let s = Setup::from_config(&cfg)?;
    let levels = [9, 10, 11, 12];
    let plan = refinement_plan(&levels, Scheme::SplitImplicit, Some(Scheme::YosidaExplicit { alpha_ratio: 0.5 }));
    let opts = TransformOptions { depth: 1, budget: Budget { n0: 32, max_paths: 1 << 20 }, ..Default::default() };
    let k = key(ctx, 9);
    let t = build_transform(s.model.clone(), s.potential.clone(), s.drift.clone(), &opts, k.child(0))?;
    // A_T on the finest self-refinement
    let a_rows = [levels.len() - 2];
    let run = uniqueness_ensemble(&s, &plan, 1.0, 100, k.child(1), Some(&t), 16, Some(&a_rows))?;
    let refine = run.refinement_rows();
    let meds: Vec<f64> = refine.iter().map(|&r| run.aggregate(r).median_sup).collect();
    let decreasing = meds.windows(2).all(|w| w[1] < w[0]);
    let tests: Vec<(usize, f64)> = refine.windows(2).map(|w| run.sign_test(w[0], w[1])).collect();
    let sign_ok = tests.iter().all(|t| t.1 < 0.01);
    let cross = run.aggregate(plan.len() - 1).median_sup;
    let a = run.aggregate(a_rows[0]);
    let a_vals: Vec<f64> = run.reports.iter().filter_map(|r| r.rows[a_rows[0]].a_terminal).collect();
    Ok(vec![
        Check::new("median-decreasing", decreasing, format!("medians {}", sci(&meds))),
        Check::new(
            "sign-test",
            sign_ok,
            format!("{:?}", tests.iter().map(|t| format!("{}/100 p={:.1e}", t.0, t.1)).collect::<Vec<_>>()),
        ),
        Check::new("cross-scheme", cross < meds[0], format!("cross at 2^12 {cross:.3e} vs 2^9 refinement {:.3e}", meds[0])),
        Check::new(
            "A_T-finite",
            a.a_finite == Some(true) && a_vals.len() == 100,
            format!("max A_T {:.3e}", a_vals.iter().copied().fold(0.0, f64::max)),
        ),
    ])
}

// 10. Decay of ∫|∇R_λ f|²dν in λ.
fn c10_scaling(ctx: &Ctx) -> HResult<Vec<Check>> {
    let m = model(8)?;
    let k = key(ctx, 10);
    let v: Arc<dyn ConvexPotential> = Arc::new(QuadraticPotential::new(1.0));
    let est = ResolventEstimator::new(m, v, 1.0, 200, k.child(0))?;
    let r = regularity_scaling_check(&est, &CoordinateSign(0), &[1.0, 4.0, 16.0, 64.0], 200, k.child(1))?;
    let slope = r.slope.unwrap_or(f64::NAN);
    let vals: Vec<String> = r.values.iter().map(|v| format!("{:.3e}", v.value)).collect();
    Ok(vec![Check::new("slope", slope <= -0.7, format!("slope {slope:.3} (values {})", vals.join(", ")))])
}

fn dir_files(dir: &Path) -> HResult<Vec<(String, Vec<u8>)>> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir)? {
        let e = e?;
        if e.file_type()?.is_file() {
            out.push((e.file_name().to_string_lossy().into_owned(), fs::read(e.path())?));
        }
    }
    out.sort();
    Ok(out)
}

/// Result files byte-identical; manifests equal up to timestamps, the
/// output path and the worker count.
pub fn compare_runs(a: &Path, b: &Path) -> HResult<Result<usize, String>> {
    let (fa, fb) = (dir_files(a)?, dir_files(b)?);
    let names = |f: &[(String, Vec<u8>)]| f.iter().map(|x| x.0.clone()).collect::<Vec<_>>();
    if names(&fa) != names(&fb) {
        return Ok(Err("file lists differ".into()));
    }
    for ((name, x), (_, y)) in fa.iter().zip(&fb) {
        if name == MANIFEST {
            let norm = |p: &Path| -> HResult<RunManifest> {
                let mut m = RunManifest::load(&p.join(MANIFEST))?.without_timestamps();
                m.config.run.out = PathBuf::new();
                m.config.run.workers = 1;
                Ok(m)
            };
            if norm(a)? != norm(b)? {
                return Ok(Err("manifests differ beyond timestamps".into()));
            }
        } else if x != y {
            return Ok(Err(format!("{name} differs")));
        }
    }
    Ok(Ok(fa.len()))
}

// 11. Re-runs and manifest replays are byte-identical; the suite fits its budget.
fn c11_determinism(ctx: &Ctx) -> HResult<Vec<Check>> {
    let mut checks = Vec::new();
    let root = ctx.out.join("determinism");
    if root.exists() {
        fs::remove_dir_all(&root)?;
    }
    let mut sim = RunConfig::default();
    sim.run.seed = ctx.seed;
    sim.model.n_modes = 8;
    sim.potential.kind = PotentialKind::Power;
    sim.drift.kind = DriftKind::Sign;
    sim.drift.b = 1.0;
    sim.dynamics.n_steps_log2 = 10;
    sim.experiment.ensemble = 2;
    let mut uni = sim.clone();
    uni.experiment.ensemble = 4;
    uni.experiment.levels = vec![6, 7, 8];
    uni.experiment.cross_scheme = Some(SchemeKind::YosidaExplicit);
    for (cmd, base) in [(Command::Simulate, &sim), (Command::Uniqueness, &uni)] {
        let d = root.join(cmd.name());
        let mut a = base.clone();
        a.run.out = d.join("a");
        let mut b = base.clone();
        b.run.out = d.join("b");
        crate::commands::execute(cmd, &a)?;
        crate::commands::execute(cmd, &b)?;
        let mut c = load_config(&a.run.out.join(MANIFEST))?;
        c.run.out = d.join("replay");
        crate::commands::execute(cmd, &c)?;
        for (label, other) in [("rerun", &b.run.out), ("replay", &c.run.out)] {
            let r = compare_runs(&a.run.out, other)?;
            checks.push(Check::new(
                format!("{}-{label}", cmd.name()),
                r.is_ok(),
                match r {
                    Ok(n) => format!("{n} files identical"),
                    Err(e) => e,
                },
            ));
        }
    }
    let total = ctx.started.elapsed().as_secs_f64();
    checks.push(Check::new("suite-runtime", total < SUITE_BUDGET_S, format!("{total:.0}s of {SUITE_BUDGET_S:.0}s")));
    Ok(checks)
}
