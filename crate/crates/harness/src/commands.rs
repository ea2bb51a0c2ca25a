//! Subcommand bodies. Each returns a JSON summary and a list of checks; the
//! runner in [`run`] owns the output directory and the manifest.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use serde_json::json;
use zvonkin_core::integrators::{
    coupled_uniqueness_run, refinement_plan, simulate_path, AOptions, BrownianIncrements, Comparison, DivergenceReport,
};
use zvonkin_core::observable::{CoordinateSign, Coordinate, FnObservable, Observable};
use zvonkin_core::potential::{BoundedDrift, ConvexPotential};
use zvonkin_core::rng::{self, StreamKey};
use zvonkin_core::stats::{mean_var, median, sign_test_p, Estimate, Z95};
use zvonkin_core::zvonkin::{
    build_transform, nonlinear_resolvent, resolvent_difference, t_lambda_apply, Budget, ResolventEstimator, TransformOptions,
    ZvonkinTransform,
};
use zvonkin_core::{CoeffVec, SpectralModel};

use crate::config::RunConfig;
use crate::error::{HResult, HarnessError, EXIT_CHECK, EXIT_PASS};
use crate::output::{config_hash, header, num, sci, Check, RunDir, RunManifest, StreamAudit, MANIFEST};
use crate::setup::{experiment, scheme, Setup};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Model,
    Simulate,
    Uniqueness,
    Transform,
    Resolvent,
    Invariants,
    Acceptance,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Model => "model",
            Command::Simulate => "simulate",
            Command::Uniqueness => "uniqueness",
            Command::Transform => "transform",
            Command::Resolvent => "resolvent",
            Command::Invariants => "invariants",
            Command::Acceptance => "acceptance",
        }
    }
}

pub struct Outcome {
    pub summary: serde_json::Value,
    pub checks: Vec<Check>,
}

/// [`execute`] plus one printed line per check.
pub fn run(cmd: Command, cfg: &RunConfig) -> HResult<i32> {
    let (code, checks) = execute(cmd, cfg)?;
    for c in &checks {
        println!("{}", c.line());
    }
    Ok(code)
}

/// Runs `cmd` into `cfg.run.out`, writes the manifest and returns the exit
/// code with the checks. Errors that abort the run are still recorded in the
/// manifest.
pub fn execute(cmd: Command, cfg: &RunConfig) -> HResult<(i32, Vec<Check>)> {
    let started_at = chrono::Utc::now().to_rfc3339();
    let mut dir = RunDir::create(&cfg.run.out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.run.workers)
        .build()
        .map_err(|e| HarnessError::Config(format!("worker pool: {e}")))?;
    let result = pool.install(|| match cmd {
        Command::Model => cmd_model(cfg, &mut dir),
        Command::Simulate => cmd_simulate(cfg, &mut dir),
        Command::Uniqueness => cmd_uniqueness(cfg, &mut dir),
        Command::Transform => cmd_transform(cfg, &mut dir),
        Command::Resolvent => cmd_resolvent(cfg, &mut dir),
        Command::Invariants => cmd_invariants(cfg, &mut dir),
        Command::Acceptance => crate::acceptance::cmd_acceptance(cfg, &mut dir),
    });
    let (exit_code, checks, summary, err) = match result {
        Ok(o) => {
            let code = if o.checks.iter().all(|c| c.pass) { EXIT_PASS } else { EXIT_CHECK };
            (code, o.checks, o.summary, None)
        }
        Err(e) => (e.exit_code(), Vec::new(), json!({ "error": e.to_string() }), Some(e)),
    };
    let manifest = RunManifest {
        tool: "zvonkin".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: cmd.name().into(),
        seed: cfg.run.seed,
        config_hash: config_hash(cfg),
        config: cfg.clone(),
        started_at,
        finished_at: chrono::Utc::now().to_rfc3339(),
        exit_code,
        checks: checks.clone(),
        files: dir.files().to_vec(),
        summary,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    std::fs::write(dir.path().join(MANIFEST), text)?;
    match err {
        Some(e) => Err(e),
        None => Ok((exit_code, checks)),
    }
}

fn audit_check(audit: &StreamAudit) -> Check {
    let reused = audit.reused();
    Check::new("stream-ids-unique", reused.is_empty(), format!("{} streams, {} reused", audit.len(), reused.len()))
}

pub fn cmd_model(cfg: &RunConfig, dir: &mut RunDir) -> HResult<Outcome> {
    let s = Setup::from_config(cfg)?;
    let m = &s.model;
    dir.write_csv(
        "model.csv",
        &header(&["k", "a_k", "q_k"]),
        (0..m.n_modes()).map(|k| vec![(k + 1).to_string(), num(m.a()[k]), num(m.q()[k])]),
    )?;
    let trace: f64 = m.q().iter().sum();
    let mut worst = 0.0f64;
    for k in 0..m.n_modes() {
        let e = CoeffVec::unit(m.n_modes(), k);
        worst = worst.max(m.analyze(&m.synth(&e)?)?.dist(&e));
    }
    let checks = vec![
        Check::new("trace-below-one-twelfth", trace <= 1.0 / 12.0, format!("sum q_k = {trace:.12}")),
        Check::new("basis-round-trip", worst < 1e-12, format!("max |analyze(synth(e_k)) - e_k| = {worst:.3e}")),
    ];
    Ok(Outcome { summary: json!({ "model": m.manifest(), "trace_q": trace }), checks })
}

fn path_key(cfg: &RunConfig, exp: u64, i: usize) -> StreamKey {
    StreamKey::root(cfg.run.seed, exp).child(i as u64)
}

pub fn cmd_simulate(cfg: &RunConfig, dir: &mut RunDir) -> HResult<Outcome> {
    let s = Setup::from_config(cfg)?;
    let (t_end, level) = (cfg.dynamics.t_end, cfg.dynamics.n_steps_log2);
    let n = s.model.n_modes();
    let mut audit = StreamAudit::default();
    for i in 0..cfg.experiment.ensemble {
        audit.log("path", i as u64, path_key(cfg, experiment::SIMULATE, i));
    }
    let paths = (0..cfg.experiment.ensemble)
        .into_par_iter()
        .map(|i| {
            let noise = BrownianIncrements::generate(n, t_end, level, path_key(cfg, experiment::SIMULATE, i))?;
            simulate_path(&s.model, &*s.potential, &*s.drift, &s.x0, t_end, 1 << level, s.scheme, &noise)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=n).map(|k| format!("x_{k}")));
    for (i, p) in paths.iter().enumerate() {
        dir.write_csv(
            &format!("path_{i:04}.csv"),
            &cols,
            p.times.iter().zip(&p.states).map(|(t, x)| std::iter::once(num(*t)).chain(x.iter().map(|v| num(*v)))),
        )?;
        dir.write_csv(
            &format!("diagnostics_{i:04}.csv"),
            &header(&["t", "intBdW", "intVdW", "intV2", "E_norm"]),
            p.times.iter().zip(&p.diagnostics).map(|(t, d)| {
                vec![num(*t), num(d.int_b_dw), num(d.int_v_dw), num(d.int_v2), num(d.e_norm)]
            }),
        )?;
    }
    audit.write(dir)?;
    let norms: Vec<f64> = paths.iter().map(|p| p.terminal().norm()).collect();
    let (mean, _) = mean_var(&norms);
    Ok(Outcome {
        summary: json!({
            "paths": paths.len(),
            "steps": 1u64 << level,
            "mean_terminal_norm": mean,
            "max_terminal_norm": norms.iter().copied().fold(0.0, f64::max),
        }),
        checks: vec![audit_check(&audit)],
    })
}

pub fn transform_options(cfg: &RunConfig) -> TransformOptions {
    let e = &cfg.experiment;
    TransformOptions {
        depth: e.depth,
        budget: Budget { n0: e.n0, max_paths: e.max_paths },
        dt: e.dt,
        fd_rel: zvonkin_core::zvonkin::DEFAULT_FD_REL,
        lambda: e.lambda,
    }
}

pub fn build_from_config(cfg: &RunConfig, s: &Setup) -> HResult<ZvonkinTransform> {
    Ok(build_transform(
        s.model.clone(),
        s.potential.clone(),
        s.drift.clone(),
        &transform_options(cfg),
        StreamKey::root(cfg.run.seed, experiment::TRANSFORM).child(0),
    )?)
}

/// Per-seed divergence reports over a shared plan.
pub struct UniquenessRun {
    pub plan: Vec<Comparison>,
    pub reports: Vec<DivergenceReport>,
}

#[allow(clippy::too_many_arguments)]
pub fn uniqueness_ensemble(
    s: &Setup,
    plan: &[Comparison],
    t_end: f64,
    seeds: usize,
    key: StreamKey,
    transform: Option<&ZvonkinTransform>,
    a_points: usize,
    a_rows: Option<&[usize]>,
) -> HResult<UniquenessRun> {
    let finest = plan.iter().map(|c| c.level_x.max(c.level_y)).max().unwrap_or(0);
    let reports = (0..seeds)
        .into_par_iter()
        .map(|i| {
            let noise = BrownianIncrements::generate(s.model.n_modes(), t_end, finest, key.child(i as u64))?;
            let a = transform.map(|t| AOptions { transform: t, points: a_points, rows: a_rows });
            coupled_uniqueness_run(&s.model, &*s.potential, &*s.drift, &s.x0, t_end, plan, &noise, a.as_ref())
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(UniquenessRun { plan: plan.to_vec(), reports })
}

/// Row statistics of one comparison across seeds.
pub struct Aggregate {
    pub median_sup: f64,
    pub median_terminal: f64,
    pub mean_sup: Estimate,
    pub a_finite: Option<bool>,
}

impl UniquenessRun {
    pub fn column(&self, row: usize) -> Vec<f64> {
        self.reports.iter().map(|r| r.rows[row].sup_diff).collect()
    }

    pub fn aggregate(&self, row: usize) -> Aggregate {
        let sup = self.column(row);
        let term: Vec<f64> = self.reports.iter().map(|r| r.rows[row].terminal_diff).collect();
        let a: Vec<Option<f64>> = self.reports.iter().map(|r| r.rows[row].a_terminal).collect();
        Aggregate {
            median_sup: median(&sup),
            median_terminal: median(&term),
            mean_sup: Estimate::from_samples(&sup),
            a_finite: a.iter().any(Option::is_some).then(|| a.iter().all(|v| v.is_some_and(f64::is_finite))),
        }
    }

    /// Self-refinement rows in plan order.
    pub fn refinement_rows(&self) -> Vec<usize> {
        (0..self.plan.len())
            .filter(|&i| self.plan[i].scheme_x == self.plan[i].scheme_y && self.plan[i].level_x != self.plan[i].level_y)
            .collect()
    }

    /// One-sided sign test that row `b` is smaller than row `a` seed by seed.
    pub fn sign_test(&self, a: usize, b: usize) -> (usize, f64) {
        let (ca, cb) = (self.column(a), self.column(b));
        let wins = ca.iter().zip(&cb).filter(|(x, y)| y < x).count();
        (wins, sign_test_p(wins, ca.len()))
    }
}

pub fn cmd_uniqueness(cfg: &RunConfig, dir: &mut RunDir) -> HResult<Outcome> {
    let s = Setup::from_config(cfg)?;
    let e = &cfg.experiment;
    let cross = e.cross_scheme.map(|k| scheme(k, e.cross_alpha_ratio));
    let mut plan = refinement_plan(&e.levels, s.scheme, cross);
    if plan.is_empty() {
        // a single level: compare the run with itself
        plan.push(Comparison { level_x: e.levels[0], scheme_x: s.scheme, level_y: e.levels[0], scheme_y: s.scheme });
    }
    let transform = if e.a_functional { Some(build_from_config(cfg, &s)?) } else { None };
    let key = StreamKey::root(cfg.run.seed, experiment::UNIQUENESS);
    let mut audit = StreamAudit::default();
    for i in 0..e.ensemble {
        audit.log("seed", i as u64, key.child(i as u64));
    }
    let run = uniqueness_ensemble(&s, &plan, cfg.dynamics.t_end, e.ensemble, key, transform.as_ref(), e.a_points, None)?;

    let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
    dir.write_csv(
        "divergence.csv",
        &header(&["seed", "comparison", "level_x", "level_y", "sup_diff", "terminal_diff", "A_T"]),
        run.reports.iter().enumerate().flat_map(|(i, r)| {
            r.rows.iter().map(move |row| {
                vec![
                    i.to_string(),
                    row.comparison.label(),
                    row.comparison.level_x.to_string(),
                    row.comparison.level_y.to_string(),
                    num(row.sup_diff),
                    num(row.terminal_diff),
                    opt(row.a_terminal),
                ]
            })
        }),
    )?;
    let aggs: Vec<Aggregate> = (0..plan.len()).map(|r| run.aggregate(r)).collect();
    let refine = run.refinement_rows();
    let tests: Vec<Option<(usize, f64)>> =
        (0..plan.len()).map(|r| refine.iter().position(|&x| x == r).filter(|&p| p > 0).map(|p| run.sign_test(refine[p - 1], r))).collect();
    dir.write_csv(
        "divergence_summary.csv",
        &header(&[
            "comparison",
            "median_sup_diff",
            "median_terminal_diff",
            "mean_sup_diff",
            "ci_halfwidth",
            "n_samples",
            "decrease_count",
            "sign_test_p",
        ]),
        plan.iter().zip(&aggs).zip(&tests).map(|((c, a), t)| {
            vec![
                c.label(),
                num(a.median_sup),
                num(a.median_terminal),
                num(a.mean_sup.value),
                num(a.mean_sup.ci),
                a.mean_sup.n_samples.to_string(),
                t.map(|t| t.0.to_string()).unwrap_or_default(),
                t.map(|t| num(t.1)).unwrap_or_default(),
            ]
        }),
    )?;
    audit.write(dir)?;

    let mut checks = vec![audit_check(&audit)];
    let identical: Vec<usize> =
        (0..plan.len()).filter(|&i| plan[i].level_x == plan[i].level_y && plan[i].scheme_x == plan[i].scheme_y).collect();
    if !identical.is_empty() {
        let zero = identical.iter().all(|&r| run.column(r).iter().all(|v| *v == 0.0));
        checks.push(Check::new("identical-runs-coincide", zero, format!("{} rows", identical.len())));
    }
    if refine.len() > 1 {
        let meds: Vec<f64> = refine.iter().map(|&r| aggs[r].median_sup).collect();
        let ok = meds.windows(2).all(|w| w[1] <= w[0]);
        checks.push(Check::new("median-sup-nonincreasing", ok, sci(&meds)));
    }
    if let (Some(&first), Some(last)) = (refine.first(), plan.len().checked_sub(1)) {
        if cross.is_some() {
            let (c, r) = (aggs[last].median_sup, aggs[first].median_sup);
            checks.push(Check::new(
                "cross-scheme-below-coarsest-refinement",
                c < r,
                format!("median cross {c:.3e} vs coarsest refinement {r:.3e}"),
            ));
        }
    }
    if transform.is_some() {
        let ok = aggs.iter().all(|a| a.a_finite != Some(false));
        checks.push(Check::new("A_T-finite", ok, "all seeds and rows"));
    }
    let rows: Vec<_> = plan
        .iter()
        .zip(&aggs)
        .map(|(c, a)| json!({ "comparison": c.label(), "median_sup_diff": a.median_sup, "median_terminal_diff": a.median_terminal }))
        .collect();
    Ok(Outcome { summary: json!({ "seeds": e.ensemble, "rows": rows }), checks })
}

/// Probe pair: `x` from `γ`, `y = x + r·u` with `u` a unit `γ`-direction and
/// `r` log-uniform on `[3·10⁻³, 0.3]`.
pub fn sample_pair(model: &SpectralModel, key: StreamKey) -> (CoeffVec, CoeffVec) {
    let mut rng = key.stream();
    let x = model.sample_gamma(&mut rng);
    let u = model.sample_gamma(&mut rng);
    let r = 3e-3 * 100f64.powf(rng::uniform(&mut rng));
    let mut y = x.clone();
    y.axpy(r / u.norm(), &u);
    (x, y)
}

pub fn sample_point(model: &SpectralModel, key: StreamKey) -> CoeffVec {
    model.sample_gamma(&mut key.stream())
}

#[derive(Debug, Clone, Copy)]
pub struct PairProbe {
    pub dist: f64,
    pub du: f64,
    pub du_ci: f64,
    pub dphi: f64,
}

pub fn probe_transform(t: &ZvonkinTransform, pairs: &[(CoeffVec, CoeffVec)]) -> HResult<Vec<PairProbe>> {
    Ok(pairs
        .par_iter()
        .map(|(x, y)| {
            let d = t.u_difference(x, y)?;
            let dphi = x.sub(y).add(&d.value).norm();
            Ok(PairProbe { dist: x.dist(y), du: d.value.norm(), du_ci: d.norm_ci(), dphi })
        })
        .collect::<Result<Vec<_>, zvonkin_core::Error>>()?)
}

/// Bounds on `U` and `φ` over sampled pairs, with slack `3·CI`.
pub fn transform_checks(t: &ZvonkinTransform, probes: &[PairProbe]) -> Vec<Check> {
    let lip = t.c_lambda() * t.b_inf();
    let mut worst_u = f64::NEG_INFINITY;
    let mut worst_lo = f64::NEG_INFINITY;
    let mut worst_hi = f64::NEG_INFINITY;
    for p in probes {
        let slack = 3.0 * p.du_ci;
        worst_u = worst_u.max(p.du - lip * p.dist - slack);
        worst_lo = worst_lo.max(0.5 * p.dist - p.dphi - slack);
        worst_hi = worst_hi.max(p.dphi - 1.5 * p.dist - slack);
    }
    let max_ratio = probes.iter().map(|p| p.du / p.dist).fold(0.0, f64::max);
    vec![
        Check::new(
            "U-lipschitz",
            worst_u <= 0.0,
            format!("max |dU|/|dx| = {max_ratio:.4} vs c(lambda)*b = {lip:.4}; worst excess {worst_u:.3e}"),
        ),
        Check::new("phi-lower-bound", worst_lo <= 0.0, format!("worst excess {worst_lo:.3e} over {} pairs", probes.len())),
        Check::new("phi-upper-bound", worst_hi <= 0.0, format!("worst excess {worst_hi:.3e} over {} pairs", probes.len())),
    ]
}

pub fn round_trip_error(t: &ZvonkinTransform, points: &[CoeffVec]) -> HResult<f64> {
    let errs = points
        .par_iter()
        .map(|x| Ok(t.phi_inverse(&t.phi_apply(x)?)?.dist(x)))
        .collect::<Result<Vec<f64>, zvonkin_core::Error>>()?;
    Ok(errs.into_iter().fold(0.0, f64::max))
}

pub fn cmd_transform(cfg: &RunConfig, dir: &mut RunDir) -> HResult<Outcome> {
    let s = Setup::from_config(cfg)?;
    let t = build_from_config(cfg, &s)?;
    let key = StreamKey::root(cfg.run.seed, experiment::TRANSFORM);
    let pairs: Vec<_> = (0..cfg.experiment.pairs).map(|i| sample_pair(&s.model, key.child(1).child(i as u64))).collect();
    let probes = probe_transform(&t, &pairs)?;
    let lips = t.sampled_lipschitz(&pairs)?;
    let points: Vec<_> =
        (0..cfg.experiment.points.min(20)).map(|i| sample_point(&s.model, key.child(2).child(i as u64))).collect();
    let rt = round_trip_error(&t, &points)?;
    let summary = t.summary(Some(&lips));
    dir.write_json("transform.json", &summary)?;
    dir.write_csv(
        "pairs.csv",
        &header(&["pair", "dist", "dU_norm", "dU_ci_halfwidth", "dphi_norm"]),
        probes.iter().enumerate().map(|(i, p)| vec![i.to_string(), num(p.dist), num(p.du), num(p.du_ci), num(p.dphi)]),
    )?;
    let mut checks = transform_checks(&t, &probes);
    checks.push(Check::new("phi-round-trip", rt <= 1e-8, format!("max error {rt:.3e} over {} points", points.len())));
    Ok(Outcome { summary: serde_json::to_value(&summary).expect("summary serializes"), checks })
}

/// `1` evaluated along simulated paths (not short-circuited as a constant).
pub fn unit_observable() -> impl Observable {
    FnObservable::bounded(|_: &CoeffVec| 1.0, 1.0)
}

/// Sampled Lipschitz ratios of `R_λ f` over pairs: `(ratio, CI/|x−y|)`.
pub fn resolvent_ratios(
    est: &ResolventEstimator,
    f: &dyn Observable,
    pairs: &[(CoeffVec, CoeffVec)],
) -> HResult<Vec<(f64, f64)>> {
    Ok(pairs
        .par_iter()
        .map(|(x, y)| {
            let d = resolvent_difference(est, f, x, y)?;
            let dist = x.dist(y);
            Ok((d.value.abs() / dist, d.ci / dist))
        })
        .collect::<Result<Vec<_>, zvonkin_core::Error>>()?)
}

pub fn t_lambda_sup(
    est: &ResolventEstimator,
    drift: &dyn BoundedDrift,
    phi: &dyn Observable,
    points: &[CoeffVec],
) -> HResult<Vec<Estimate>> {
    Ok(points
        .par_iter()
        .map(|z| t_lambda_apply(est, drift, phi, z))
        .collect::<Result<Vec<_>, zvonkin_core::Error>>()?)
}

pub fn cmd_resolvent(cfg: &RunConfig, dir: &mut RunDir) -> HResult<Outcome> {
    let s = Setup::from_config(cfg)?;
    let e = &cfg.experiment;
    let key = StreamKey::root(cfg.run.seed, experiment::RESOLVENT);
    let pairs: Vec<_> = (0..e.pairs).map(|i| sample_pair(&s.model, key.child(1).child(i as u64))).collect();
    let points: Vec<_> = (0..e.points).map(|i| sample_point(&s.model, key.child(2).child(i as u64))).collect();
    let f = CoordinateSign(0);
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    for (j, &lambda) in e.lambdas.iter().enumerate() {
        let mut est = ResolventEstimator::new(s.model.clone(), s.potential.clone(), lambda, e.paths, key.child(3).child(j as u64))?;
        est.dt = e.dt;
        let mass = nonlinear_resolvent(&est, &unit_observable(), &s.x0)?;
        let mass_ok = (mass.value - 1.0 / lambda).abs() <= mass.ci + 1e-12 / lambda;
        checks.push(Check::new(format!("mass[lambda={lambda}]"), mass_ok, format!("{:.6} vs {:.6}", mass.value, 1.0 / lambda)));
        rows.push(vec![num(lambda), "mass".into(), "0".into(), num(mass.value), num(mass.ci), num(1.0 / lambda), mass.n_samples.to_string()]);

        let bound = (PI / lambda).sqrt();
        let ratios = resolvent_ratios(&est, &f, &pairs)?;
        let worst = ratios.iter().map(|(r, ci)| r - 3.0 * ci - bound).fold(f64::NEG_INFINITY, f64::max);
        let max_ratio = ratios.iter().map(|r| r.0).fold(0.0, f64::max);
        checks.push(Check::new(
            format!("lipschitz[lambda={lambda}]"),
            worst <= 0.0,
            format!("max ratio {max_ratio:.4} vs sqrt(pi/lambda) = {bound:.4}"),
        ));
        for (i, (r, ci)) in ratios.iter().enumerate() {
            rows.push(vec![num(lambda), "lipschitz-ratio".into(), i.to_string(), num(*r), num(*ci), num(bound), e.paths.to_string()]);
        }

        if let Some(omega) = s.potential.linear_rate() {
            let c = 1.0 / (lambda + s.model.a()[0] + omega);
            let mut ok = true;
            for (i, z) in points.iter().take(10).enumerate() {
                let r = nonlinear_resolvent(&est, &Coordinate(0), z)?;
                ok &= (r.value - c * z[0]).abs() <= 3.0 * r.ci + 1e-12;
                rows.push(vec![num(lambda), "linear".into(), i.to_string(), num(r.value), num(r.ci), num(c * z[0]), r.n_samples.to_string()]);
            }
            checks.push(Check::new(format!("linear-closed-form[lambda={lambda}]"), ok, "R x_1 = z_1/(lambda + a_1 + omega)"));
        }
    }
    let b = s.drift.b_inf();
    if b > 0.0 {
        let lambda = 4.0 * PI * b * b;
        let mut est = ResolventEstimator::new(s.model.clone(), s.potential.clone(), lambda, e.paths, key.child(4))?;
        est.dt = e.dt;
        let t = t_lambda_sup(&est, &*s.drift, &f, &points)?;
        let worst = t.iter().map(|v| v.value.abs() - 3.0 * v.ci - 0.5).fold(f64::NEG_INFINITY, f64::max);
        let sup = t.iter().map(|v| v.value.abs()).fold(0.0, f64::max);
        checks.push(Check::new("T-contraction", worst <= 0.0, format!("sup |T phi| = {sup:.4} vs 0.5 at lambda = {lambda:.4}")));
        for (i, v) in t.iter().enumerate() {
            rows.push(vec![num(lambda), "T-lambda".into(), i.to_string(), num(v.value), num(v.ci), num(0.5), v.n_samples.to_string()]);
        }
    }
    dir.write_csv("resolvent.csv", &header(&["lambda", "check", "index", "value", "ci_halfwidth", "bound", "n_samples"]), rows)?;
    Ok(Outcome { summary: json!({ "lambdas": e.lambdas, "pairs": e.pairs, "points": e.points }), checks })
}

/// `2V`: the invariant density of `dX = (AX − ∇V)dt + dW` is `∝ e^{−2V}γ`.
struct Doubled(Arc<dyn ConvexPotential>);

impl ConvexPotential for Doubled {
    fn value(&self, x: &CoeffVec) -> f64 {
        2.0 * self.0.value(x)
    }
    fn gradient(&self, x: &CoeffVec) -> CoeffVec {
        self.0.gradient(x).scaled(2.0)
    }
    fn omega(&self) -> f64 {
        2.0 * self.0.omega()
    }
}

/// Per-mode stationary second moments: ensemble value and oracle.
pub struct ModeMoment {
    pub empirical: Estimate,
    pub oracle: Estimate,
}

pub fn stationary_moments(cfg: &RunConfig, s: &Setup, key: StreamKey) -> HResult<Vec<ModeMoment>> {
    let (t_end, level) = (cfg.dynamics.t_end, cfg.dynamics.n_steps_log2);
    let n = s.model.n_modes();
    let k_max = cfg.experiment.check_modes.unwrap_or(n.min(8));
    let terminals = (0..cfg.experiment.ensemble)
        .into_par_iter()
        .map(|i| {
            let noise = BrownianIncrements::generate(n, t_end, level, key.child(i as u64))?;
            let p = simulate_path(&s.model, &*s.potential, &*s.drift, &s.x0, t_end, 1 << level, s.scheme, &noise)?;
            Ok(p.terminal().clone())
        })
        .collect::<Result<Vec<_>, zvonkin_core::Error>>()?;
    let oracle: Vec<Estimate> = match s.potential.linear_rate() {
        Some(omega) if s.drift.b_inf() == 0.0 => {
            (0..k_max).map(|k| Estimate::exact(0.5 / (s.model.a()[k] + omega))).collect()
        }
        _ => {
            let nu = s.model.sample_nu(&Doubled(s.potential.clone()), cfg.experiment.nu_samples, StreamKey::root(cfg.run.seed, experiment::INVARIANTS).child(u64::MAX))?;
            (0..k_max)
                .map(|k| {
                    let vals: Vec<f64> = nu.samples.iter().map(|x| x[k] * x[k]).collect();
                    let mean = nu.expect(|x| x[k] * x[k]);
                    let (_, var) = mean_var(&vals);
                    Estimate { value: mean, ci: Z95 * (var / nu.ess).sqrt(), n_samples: vals.len() }
                })
                .collect()
        }
    };
    Ok((0..k_max)
        .map(|k| {
            let sq: Vec<f64> = terminals.iter().map(|x| x[k] * x[k]).collect();
            ModeMoment { empirical: Estimate::from_samples(&sq), oracle: oracle[k] }
        })
        .collect())
}

pub fn cmd_invariants(cfg: &RunConfig, dir: &mut RunDir) -> HResult<Outcome> {
    let s = Setup::from_config(cfg)?;
    let key = StreamKey::root(cfg.run.seed, experiment::INVARIANTS);
    let mut audit = StreamAudit::default();
    for i in 0..cfg.experiment.ensemble {
        audit.log("path", i as u64, key.child(i as u64));
    }
    let moments = stationary_moments(cfg, &s, key)?;
    dir.write_csv(
        "invariants.csv",
        &header(&["k", "second_moment", "ci_halfwidth", "oracle", "oracle_ci_halfwidth", "rel_err", "n_samples"]),
        moments.iter().enumerate().map(|(k, m)| {
            vec![
                (k + 1).to_string(),
                num(m.empirical.value),
                num(m.empirical.ci),
                num(m.oracle.value),
                num(m.oracle.ci),
                num((m.empirical.value / m.oracle.value - 1.0).abs()),
                m.empirical.n_samples.to_string(),
            ]
        }),
    )?;
    audit.write(dir)?;
    let worst = moments.iter().map(|m| (m.empirical.value / m.oracle.value - 1.0).abs()).fold(0.0, f64::max);
    let ok = moments
        .iter()
        .all(|m| (m.empirical.value - m.oracle.value).abs() <= 0.05 * m.oracle.value + m.oracle.ci);
    let checks = vec![
        audit_check(&audit),
        Check::new("stationary-moments-5pct", ok, format!("max relative error {worst:.4} over {} modes", moments.len())),
    ];
    Ok(Outcome { summary: json!({ "paths": cfg.experiment.ensemble, "max_rel_err": worst }), checks })
}
