use std::path::{Path, PathBuf};

use clbf::cli::{run_from_args, RunManifest, EXIT_ERROR, EXIT_FALSIFIED, EXIT_OK, MANIFEST, SUMMARY};
use clbf::simulator::BatchReport;
use serde_json::{json, Value};
use tempfile::TempDir;

/// Damped integrator in a disk of radius 2, two inputs.
fn toy(bounds: Value) -> Value {
    json!({
        "name": "toy",
        "system": {
            "n": 2, "m": 2,
            "f": ["-x1 + x2^2 / 4", "-x2"],
            "g": [["1", "0"], ["0", "1"]],
            "domain": [[-3.0, 3.0], [-3.0, 3.0]]
        },
        "constraints": ["x1^2 / 4 + x2^2 / 4", "x1 - 1"],
        "input_bounds": bounds,
        "softmax": { "tau": 6.0 },
        "clf": { "quadratic": { "p": [[1.0, 0.0], [0.0, 1.0]], "k": [[0.5, 0.0], [0.0, 0.5]], "c": 0.2 } },
        "patch": { "eps_schedule": [0.5, 0.25] },
        "verifier": { "delta": 1e-4, "min_width": 1e-6, "budget": 2000000, "workers": 2 },
        "simulate": { "t_end": 2.0, "dt": 1e-2, "count": 5, "seed": 1 },
        "outputs": { "dir": "unused", "grid": 40, "grid_axes": [0, 1] }
    })
}

fn ball() -> Value {
    json!({ "ball": { "radius": 1.0 } })
}

fn boxed() -> Value {
    json!({ "box": { "lower": [-1.0, -1.0], "upper": [1.0, 1.0] } })
}

fn write_config(dir: &Path, cfg: &Value) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, serde_json::to_vec_pretty(cfg).unwrap()).unwrap();
    p
}

fn run(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> u8 {
    let mut args = vec![
        "clbf".to_string(),
        cmd.to_string(),
        "--config".into(),
        config.display().to_string(),
        "--out".into(),
        out.display().to_string(),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    run_from_args(args)
}

fn manifest(out: &Path) -> RunManifest {
    serde_json::from_slice(&std::fs::read(out.join(MANIFEST)).unwrap()).unwrap()
}

#[test]
fn full_pipeline_on_toy() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &toy(ball()));
    let out = dir.path().join("out");
    assert_eq!(run("verify", &cfg, &out, &[]), EXIT_OK);
    let m = manifest(&out);
    assert_eq!(m.status, "verified");
    assert!(m.checks.iter().all(|c| c.verdict.as_ref().is_some_and(|v| v.is_verified())));
    assert!(m.timings.contains_key("cbf") && m.timings.contains_key("compat"));
    assert_eq!(run("build", &cfg, &out, &[]), EXIT_OK);
    for f in ["certificate.json", "w_grid.csv", "h_grid.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let grid = std::fs::read_to_string(out.join("w_grid.csv")).unwrap();
    assert!(grid.starts_with("i,j,x1,x2,W\n"));
    assert_eq!(grid.lines().count(), 1 + 40 * 40);
    assert_eq!(run("simulate", &cfg, &out, &[]), EXIT_OK);
    let report: BatchReport = serde_json::from_slice(&std::fs::read(out.join(SUMMARY)).unwrap()).unwrap();
    assert_eq!(report.runs.len(), 5);
    assert!(report.worst_max_h <= 1.0 + 1e-6);
    assert!(report.worst_u_norm <= 1.0 + 1e-9);
    let csv = std::fs::read_to_string(out.join("traj_000.csv")).unwrap();
    assert!(csv.starts_with("t,x1,x2,u1,u2,h,W\n"));
    assert!(!csv.contains('\r'));
    let outputs = manifest(&out).outputs;
    assert!(outputs.contains(&"traj_004.csv".to_string()) && outputs.contains(&SUMMARY.to_string()));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &toy(boxed()));
    let mut csvs = Vec::new();
    for (k, workers) in ["1", "3"].iter().enumerate() {
        let out = dir.path().join(format!("out{k}"));
        assert_eq!(run("verify", &cfg, &out, &["--workers", workers]), EXIT_OK);
        assert_eq!(run("build", &cfg, &out, &[]), EXIT_OK);
        assert_eq!(run("simulate", &cfg, &out, &["--workers", workers]), EXIT_OK);
        let mut m = manifest(&out);
        m.timings.clear();
        let files: Vec<Vec<u8>> = ["traj_000.csv", "traj_004.csv", "w_grid.csv", SUMMARY]
            .iter()
            .map(|f| std::fs::read(out.join(f)).unwrap())
            .collect();
        csvs.push((m.checks, m.alpha, m.eps, files));
    }
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn gating_refuses_unverified_stages() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &toy(ball()));
    let out = dir.path().join("out");
    assert_eq!(run("build", &cfg, &out, &[]), EXIT_ERROR);
    assert_eq!(run("simulate", &cfg, &out, &[]), EXIT_ERROR);
    assert_eq!(run("verify", &cfg, &out, &[]), EXIT_OK);
    assert_eq!(run("simulate", &cfg, &out, &[]), EXIT_ERROR, "simulate needs build");
    // a different config invalidates the manifest
    let mut other = toy(ball());
    other["softmax"]["tau"] = json!(7.0);
    let cfg2 = write_config(&dir.path().join("out"), &other);
    assert_eq!(run("build", &cfg2, &out, &[]), EXIT_ERROR);
}

#[test]
fn weak_inputs_are_falsified() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &toy(json!({ "ball": { "radius": 0.01 } })));
    let out = dir.path().join("out");
    assert_eq!(run("verify", &cfg, &out, &[]), EXIT_FALSIFIED);
    let m = manifest(&out);
    assert_eq!(m.status, "falsified");
    assert_eq!(run("build", &cfg, &out, &[]), EXIT_ERROR);
}

#[test]
fn config_errors_exit_at_least_three() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let mut bad = toy(ball());
    bad["system"]["f"][0] = json!("-x1 + (");
    let p = write_config(dir.path(), &bad);
    assert!(run("verify", &p, &out, &[]) >= 3);
    let mut empty = toy(ball());
    empty["constraints"] = json!([]);
    let p = write_config(dir.path(), &empty);
    assert!(run("emit-smt2", &p, &out, &[]) >= 3);
    let mut arity = toy(ball());
    arity["constraints"][0] = json!("x3 - 1");
    let p = write_config(dir.path(), &arity);
    assert!(run("verify", &p, &out, &[]) >= 3);
    assert!(run("verify", &dir.path().join("missing.json"), &out, &[]) >= 3);
    assert!(run("verify", &p, &out, &["--delta=-1"]) >= 3);
}

#[test]
fn empty_batch_simulates() {
    let dir = TempDir::new().unwrap();
    let mut c = toy(ball());
    c["simulate"]["count"] = json!(0);
    let cfg = write_config(dir.path(), &c);
    let out = dir.path().join("out");
    assert_eq!(run("verify", &cfg, &out, &[]), EXIT_OK);
    assert_eq!(run("build", &cfg, &out, &[]), EXIT_OK);
    assert_eq!(run("simulate", &cfg, &out, &[]), EXIT_OK);
    let report: BatchReport = serde_json::from_slice(&std::fs::read(out.join(SUMMARY)).unwrap()).unwrap();
    assert!(report.runs.is_empty());
}

fn smt2_files(out: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(out.join("smt2"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".smt2"))
        .collect();
    v.sort();
    v
}

#[test]
fn smt2_emission_counts() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &toy(boxed()));
    let out = dir.path().join("box");
    assert_eq!(run("emit-smt2", &cfg, &out, &[]), EXIT_OK);
    let files = smt2_files(&out);
    assert_eq!(files.iter().filter(|f| f.starts_with("compat")).count(), 4, "{files:?}");
    assert_eq!(files.iter().filter(|f| f.starts_with("cbf")).count(), 4, "{files:?}");
    for f in &files {
        let s = std::fs::read_to_string(out.join("smt2").join(f)).unwrap();
        assert!(s.contains("(check-sat)") && s.contains("(declare-fun x1 () Real)"), "{f}");
    }
    let cfg = write_config(dir.path(), &toy(ball()));
    let out = dir.path().join("ball");
    assert_eq!(run("emit-smt2", &cfg, &out, &[]), EXIT_OK);
    assert!(smt2_files(&out).len() >= 4);
}

#[test]
fn manifest_floats_round_trip_exactly() {
    // the default float parser is off by one ulp on this value
    let v = 0.014832021514779099f64;
    let back: f64 = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
    assert_eq!(back.to_bits(), v.to_bits());
}
