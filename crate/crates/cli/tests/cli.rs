use std::process::Command;

use serde_json::Value;
use srdist_cli::{run, CliError};

fn call(args: &[&str]) -> (i32, String, String) {
    let mut argv = vec!["srdist".to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run(&argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn json(s: &str) -> Value {
    serde_json::from_str(s).unwrap_or_else(|e| panic!("bad JSON ({e}): {s}"))
}

#[test]
fn geodesic_along_the_x_axis() {
    let (code, out, _) = call(&["geodesic", "--model", "heisenberg", "--from", "0,0,0", "--to", "1,0,0"]);
    assert_eq!(code, 0);
    let v = json(&out);
    assert!((v["result"]["length"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    for key in ["tool", "version", "model_hash", "seed", "grid"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["result"]["multiple_minimizers"], Value::Bool(false));
}

#[test]
fn geodesic_trajectory_csv() {
    let (code, out, _) = call(&["geodesic", "--to", "1,0,0", "--format", "csv", "--samples", "5"]);
    assert_eq!(code, 0);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "t,q1,q2,q3,p1,p2,p3,H");
    assert_eq!(lines.len(), 6);
}

#[test]
fn verify_bound_passes_and_sharpness_finds_a_witness() {
    let (code, out, _) = call(&["verify-bound", "--model", "heisenberg", "--exponent", "5", "--grid", "40x40"]);
    assert_eq!(code, 0, "{out}");
    assert_eq!(json(&out)["result"]["pass"], Value::Bool(true));

    let (code, out, _) = call(&["sharpness", "--model", "grushin", "--exponent", "4.9"]);
    assert_eq!(code, 1);
    let w = &json(&out)["result"]["witness"];
    assert!(w["beta"].as_f64().unwrap() < w["bound"].as_f64().unwrap());
}

#[test]
fn failed_bound_exits_one() {
    let (code, out, _) = call(&["verify-bound", "--model", "heisenberg", "--exponent", "4", "--grid", "20x20"]);
    assert_eq!(code, 1);
    assert!(json(&out)["result"]["violation_count"].as_u64().unwrap() > 0);
}

#[test]
fn distortion_csv_schema() {
    let (code, out, _) = call(&["distortion", "--model", "grushin", "--x", "1,0", "--lambda", "1,1", "--steps", "4"]);
    assert_eq!(code, 0);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "t,beta,method");
    assert_eq!(lines.len(), 5);
    assert!(lines[4].starts_with("1.0000000000000000e0,1.0000000000000000e0,closed"));
}

#[test]
fn wbar_csv_schema() {
    let (code, out, _) = call(&["wbar", "--samples", "10"]);
    assert_eq!(code, 0);
    assert_eq!(out.lines().next(), Some("z,wbar,taylor_bound"));
    assert_eq!(out.lines().count(), 11);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(call(&["frobnicate"]).0, 2);
    assert_eq!(call(&["geodesic", "--bogus", "1"]).0, 2);
    assert_eq!(call(&["geodesic", "--model", "heisenberg"]).0, 2, "missing --to");
    assert_eq!(call(&["geodesic", "--to", "1,0"]).0, 2, "wrong dimension");
    assert_eq!(call(&["verify-bound", "--exponent", "5", "--format", "csv"]).0, 2);
    assert_eq!(call(&["verify-bound", "--exponent", "5", "--grid", "3x3x3"]).0, 2);
    assert_eq!(call(&["wbar", "--model", "/nonexistent/model.toml"]).0, 2);
    assert_eq!(call(&["distortion", "--model", "htype", "--lambda", "1,0,0,0,1", "--method", "closed"]).0, 2);
}

#[test]
fn help_exits_zero() {
    let (code, out, _) = call(&["--help"]);
    assert_eq!(code, 0);
    assert!(out.contains("verify-bound"));
}

#[test]
fn numerical_failures_map_to_three() {
    let e = CliError::Core(srdist_core::Error::Numerical("x".into()));
    assert_eq!(e.exit_code(), 3);
    let e = CliError::Core(srdist_core::Error::NotFound("x".into()));
    assert_eq!(e.exit_code(), 3);
    let e = CliError::Core(srdist_core::Error::Input("x".into()));
    assert_eq!(e.exit_code(), 2);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "model = \"grushin\"\nseed = 7\nformat = \"json\"\n[distortion]\nx = [1.0, 0.0]\nlambda = [1.0, 1.0]\nsteps = 4\n",
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    let (code, out, err) = call(&["distortion", "--config", c]);
    assert_eq!(code, 0, "{err}");
    let v = json(&out);
    assert_eq!(v["seed"], 7);
    assert_eq!(v["model"], "grushin");
    assert_eq!(v["result"]["t"].as_array().unwrap().len(), 4);

    let (code, out, _) = call(&["distortion", "--config", c, "--steps", "2", "--seed", "9"]);
    assert_eq!(code, 0);
    let v = json(&out);
    assert_eq!(v["seed"], 9);
    assert_eq!(v["result"]["t"].as_array().unwrap().len(), 2);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    for text in ["colour = 1\n", "[distortion]\nlambda = [1.0, 1.0, 1.0]\ncolour = 1\n", "[nope]\na = 1\n"] {
        let cfg = dir.path().join("bad.toml");
        std::fs::write(&cfg, text).unwrap();
        let (code, _, err) = call(&["wbar", "--config", cfg.to_str().unwrap()]);
        assert_eq!(code, 2, "{text}");
        assert!(!err.is_empty());
    }
}

#[test]
fn model_files_and_inline_models() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("h3.toml");
    std::fs::write(&model, "kind = \"htype\"\ndim = 3\nrank = 2\n[htype]\nk = 2\nJ = [[0.0, 1.0, -1.0, 0.0]]\nS = [1.0, 0.0, 0.0, 1.0]\n").unwrap();
    let (code, out, err) = call(&["exponent-fit", "--model", model.to_str().unwrap(), "--lambda", "1,0,1"]);
    assert_eq!(code, 0, "{err}");
    assert!((json(&out)["result"]["exponent"].as_f64().unwrap() - 5.0).abs() < 0.05);

    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[model]\nkind = \"grushin\"\n").unwrap();
    let (code, out, _) = call(&["conjugate", "--config", cfg.to_str().unwrap(), "--lambda", "1,1", "--x", "1,0"]);
    assert_eq!(code, 0);
    assert_eq!(json(&out)["model"], "grushin");
}

#[test]
fn identical_runs_are_byte_identical() {
    let args = ["distortion", "--model", "grushin", "--x", "0.5,0", "--lambda", "1,2", "--method", "numeric"];
    assert_eq!(call(&args).1, call(&args).1);
    let args = ["bm", "--model", "grushin", "--exponent", "5", "--a", "-2,-1,0,1", "--b", "1,2,0,1", "--t", "0.5", "--samples", "2000", "--seed", "3"];
    let (a, b) = (call(&args), call(&args));
    assert_eq!(a.0, 0);
    assert_eq!(a.1, b.1);
}

#[test]
fn out_flag_writes_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.csv");
    let (code, out, _) = call(&["wbar", "--samples", "3", "--out", path.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(out.is_empty());
    assert!(std::fs::read_to_string(&path).unwrap().starts_with("z,wbar"));
}

#[test]
fn ot_reads_measure_files() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    std::fs::write(&a, "q1,q2,q3,weight\n0,0,0,0.5\n1,0,0,0.5\n").unwrap();
    std::fs::write(&b, "q1,q2,q3,weight\n1,0,0,0.5\n2,0,0,0.5\n").unwrap();
    let (code, out, err) = call(&["ot", "--mu0", a.to_str().unwrap(), "--mu1", b.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let v = json(&out);
    assert!((v["result"]["w2"].as_f64().unwrap() - 1.0).abs() < 1e-8);
    assert!(v["result"]["marginal_residual"].as_f64().unwrap() <= 1e-10);
    let (code, _, _) = call(&["ot", "--mu0", a.to_str().unwrap(), "--mu1", b.to_str().unwrap(), "--format", "csv"]);
    assert_eq!(code, 2, "csv needs --t");
    std::fs::write(&b, "x,y,z,w\n0,1,0,1\n").unwrap();
    assert_eq!(call(&["ot", "--mu0", a.to_str().unwrap(), "--mu1", b.to_str().unwrap()]).0, 2);
}

#[test]
fn selftest_exit_codes() {
    let (code, out, _) = call(&["selftest"]);
    assert_eq!(code, 0, "{out}");
    let (code, out, _) = call(&["selftest", "--json", "--inject-tolerance", "1e-2"]);
    assert_eq!(code, 3);
    assert_eq!(json(&out)["result"]["checks"]["exp_heisenberg"], Value::Bool(false));
}

#[test]
fn binary_honours_thread_variable() {
    let bin = env!("CARGO_BIN_EXE_srdist");
    let ok = Command::new(bin).args(["wbar", "--samples", "2"]).env("SRDIST_THREADS", "2").output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
    let bad = Command::new(bin).args(["wbar", "--samples", "2"]).env("SRDIST_THREADS", "many").output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
    let flag = Command::new(bin)
        .args(["wbar", "--samples", "2", "--threads", "1"])
        .env("SRDIST_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(flag.status.code(), Some(0));
}
