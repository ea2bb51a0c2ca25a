use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use zvonkin_harness::acceptance::compare_runs;
use zvonkin_harness::output::RunManifest;

fn zvonkin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zvonkin")).args(args).output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("run.toml");
    fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

const SIGN_DRIFT: &str = r#"
[model]
n_modes = 4

[potential]
kind = "power"
m = 3.0

[drift]
kind = "sign"
b = 1.0

[dynamics]
n_steps_log2 = 6

[experiment]
ensemble = 2
levels = [5, 6, 7]
cross_scheme = "yosida-explicit"
"#;

#[test]
fn simulate_csv_schema() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SIGN_DRIFT);
    let out = tmp.path().join("sim");
    let o = zvonkin(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let path = fs::read_to_string(out.join("path_0001.csv")).unwrap();
    let mut lines = path.split("\r\n");
    assert_eq!(lines.next(), Some("t,x_1,x_2,x_3,x_4"));
    assert_eq!(path.split("\r\n").filter(|l| !l.is_empty()).count(), 1 + 65);
    let diag = fs::read_to_string(out.join("diagnostics_0000.csv")).unwrap();
    assert!(diag.starts_with("t,intBdW,intVdW,intV2,E_norm\r\n"));

    let m = RunManifest::load(&out.join("manifest.json")).unwrap();
    assert_eq!(m.command, "simulate");
    assert_eq!(m.exit_code, 0);
    assert!(m.files.iter().any(|f| f.name == "streams.csv"));
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SIGN_DRIFT);
    for cmd in ["simulate", "uniqueness"] {
        let a = tmp.path().join(cmd).join("a");
        let b = tmp.path().join(cmd).join("b");
        // worker count must not change the results
        for (d, w) in [(&a, "1"), (&b, "2")] {
            let o = zvonkin(&[cmd, "--config", &cfg, "--seed", "11", "--workers", w, "--out", d.to_str().unwrap()]);
            assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        }
        assert!(compare_runs(&a, &b).unwrap().is_ok());

        // replay from the manifest
        let c = tmp.path().join(cmd).join("replay");
        let manifest = a.join("manifest.json");
        let o = zvonkin(&[cmd, "--config", manifest.to_str().unwrap(), "--out", c.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
        assert!(compare_runs(&a, &c).unwrap().is_ok());
    }
}

#[test]
fn seed_changes_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SIGN_DRIFT);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    zvonkin(&["simulate", "--config", &cfg, "--seed", "1", "--out", a.to_str().unwrap()]);
    zvonkin(&["simulate", "--config", &cfg, "--seed", "2", "--out", b.to_str().unwrap()]);
    assert_ne!(fs::read(a.join("path_0000.csv")).unwrap(), fs::read(b.join("path_0000.csv")).unwrap());
}

#[test]
fn config_errors_exit_2_with_line() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let cfg = write_config(tmp.path(), "[model]\nn_modes = 4\n\n[drift]\nkind = \"sign\"\nbb = 1.0\n");
    let o = zvonkin(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 6"), "{}", String::from_utf8_lossy(&o.stderr));

    let cfg = write_config(tmp.path(), "[model]\nn_modes = 4\n\n[dynamics]\nt_end = -1.0\n");
    let o = zvonkin(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 5"), "{}", String::from_utf8_lossy(&o.stderr));

    let o = zvonkin(&["simulate", "--workers", "0", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn blow_up_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[model]\nn_modes = 2\n\n[drift]\nkind = \"constant\"\nb = 1e12\n");
    let out = tmp.path().join("o");
    let o = zvonkin(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let m = RunManifest::load(&out.join("manifest.json")).unwrap();
    assert_eq!(m.exit_code, 3);
}

#[test]
fn failed_check_exits_1() {
    // a single path cannot match the stationary moments
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[potential]\nkind = \"quadratic\"\nomega = 1.0\n");
    let out = tmp.path().join("o");
    let o = zvonkin(&["invariants", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL stationary-moments-5pct"));
}

#[test]
fn transform_summary_fields() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "[model]\nn_modes = 4\n\n[potential]\nkind = \"power\"\n\n[drift]\nkind = \"tanh\"\nb = 0.5\n\n[experiment]\nn0 = 32\npairs = 20\npoints = 5\n",
    );
    let out = tmp.path().join("o");
    let o = zvonkin(&["transform", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let v: serde_json::Value = serde_json::from_slice(&fs::read(out.join("transform.json")).unwrap()).unwrap();
    assert_eq!(v["lambda"], 32.0);
    assert!(v["c_lambda"].as_f64().unwrap() * 0.5 <= 0.5);
    let comps = v["components"].as_array().unwrap();
    assert_eq!(comps.len(), 4);
    assert!(comps.iter().all(|c| c["sampled_lipschitz"].as_f64().is_some()));
}

#[test]
fn power_sign_simulation_is_fast() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "[model]\nn_modes = 16\n\n[potential]\nkind = \"power\"\nm = 3.0\n\n[drift]\nkind = \"sign\"\nb = 1.0\n\n[dynamics]\nn_steps_log2 = 10\n",
    );
    let out = tmp.path().join("o");
    let t0 = Instant::now();
    let o = zvonkin(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    let secs = t0.elapsed().as_secs_f64();
    assert_eq!(o.status.code(), Some(0));
    assert!(secs < 10.0, "{secs}s");
}

#[test]
fn every_subcommand_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[model]\nn_modes = 4\n\n[experiment]\npaths = 32\npairs = 10\npoints = 5\nn0 = 16\n");
    for cmd in ["model", "resolvent", "transform"] {
        let out = tmp.path().join(cmd);
        let o = zvonkin(&[cmd, "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&o.stdout));
        assert!(out.join("manifest.json").exists());
    }
}
