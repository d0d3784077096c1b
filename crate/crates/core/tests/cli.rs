use std::path::Path;
use std::process::{Command, Output};

use fogas::harness::OracleContext;
use fogas::oracle::evaluate_policy;
use fogas::{DVector, LinearMdp, TabularPolicy};

fn fogas(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fogas")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = fogas(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

fn generate(dir: &Path, name: &str, seed: &str) -> String {
    let path = p(dir, name);
    ok(&["generate", "--states", "5", "--actions", "3", "--dim", "4", "--gamma", "0.9", "--seed", seed, "--out", &path]);
    path
}

fn collect(mdp: &str, dir: &Path, n: &str) -> String {
    let path = p(dir, "data.csv");
    ok(&["collect", "--mdp", mdp, "--behavior", "uniform", "--mode", "occupancy", "--n", n, "--seed", "3", "--out", &path]);
    path
}

fn field(stdout: &str, key: &str) -> f64 {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("{key} missing in {stdout}"))
        .trim()
        .parse()
        .unwrap()
}

#[test]
fn generate_is_deterministic_and_valid() {
    let dir = tempfile::tempdir().unwrap();
    let a = generate(dir.path(), "a.json", "1");
    let b = generate(dir.path(), "b.json", "1");
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let out = ok(&["generate", "--states", "5", "--actions", "3", "--dim", "4", "--seed", "1", "--out", &a]);
    assert_eq!(field(&out, "d"), 4.0);
    assert!(field(&out, "R") >= 1.0);
    ok(&["validate", "--mdp", &a]);
}

#[test]
fn zero_dim_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = fogas(&["generate", "--states", "5", "--actions", "3", "--dim", "0", "--out", &p(dir.path(), "m.json")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dim must be ≥ 1"));
}

#[test]
fn collect_writes_header_and_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mdp = generate(dir.path(), "m.json", "2");
    let data = collect(&mdp, dir.path(), "10");
    assert_eq!(std::fs::read_to_string(data).unwrap().lines().count(), 11);

    let out = fogas(&["collect", "--mdp", &p(dir.path(), "missing.json"), "--n", "5", "--out", &p(dir.path(), "x.csv")]);
    assert!(!out.status.success());
}

#[test]
fn single_iteration_solve_scores_uniform() {
    let dir = tempfile::tempdir().unwrap();
    let mdp_path = generate(dir.path(), "m.json", "4");
    let data = collect(&mdp_path, dir.path(), "64");
    let run = p(dir.path(), "run.json");
    let results = p(dir.path(), "results.csv");
    let out = ok(&["solve", "--mdp", &mdp_path, "--data", &data, "--auto-tune", "--T", "1", "--out", &run, "--results", &results]);

    let mdp = LinearMdp::load(&mdp_path).unwrap();
    let star = OracleContext::new(&mdp).unwrap().star.return_value;
    let uniform = evaluate_policy(&mdp, &TabularPolicy::uniform(5, 3)).unwrap().return_value;
    assert!((field(&out, "suboptimality") - (star - uniform)).abs() < 1e-12);
    assert_eq!(field(&out, "J"), 1.0);

    ok(&["solve", "--mdp", &mdp_path, "--data", &data, "--auto-tune", "--T", "1", "--out", &run, "--results", &results]);
    let text = std::fs::read_to_string(&results).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    let strip = |r: &str| {
        let mut f: Vec<&str> = r.split(',').collect();
        f.remove(7);
        f.join(",")
    };
    assert!(text.lines().next().unwrap().split(',').nth(7).unwrap().contains("wall"));
    assert_eq!(strip(rows[0]), strip(rows[1]));
}

#[test]
fn solve_rejects_bad_rates() {
    let dir = tempfile::tempdir().unwrap();
    let mdp = generate(dir.path(), "m.json", "5");
    let data = collect(&mdp, dir.path(), "16");
    let out = fogas(&["solve", "--mdp", &mdp, "--data", &data, "--rates", "0.1,0.1,-1,0.1", "--T", "5", "--out", &p(dir.path(), "r.json")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("eta"));
}

#[test]
fn empty_seed_list_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = fogas(&["sweep", "--seeds", "", "--out-dir", &p(dir.path(), "s")]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_rerun_is_identical_except_timing() {
    let dir = tempfile::tempdir().unwrap();
    let mdp = generate(dir.path(), "m.json", "6");
    let config = format!(
        r#"{{"mdp": {{"file": {mdp:?}}}, "behavior": "uniform", "sampling_mode": "occupancy",
            "n_values": [32, 64], "seeds": [0, 1],
            "solver": {{"auto_tune": true, "delta": 0.05, "iterations": 20, "iteration_cap": 20000}},
            "output_dir": {:?}}}"#,
        p(dir.path(), "out")
    );
    let cfg_path = p(dir.path(), "cfg.json");
    std::fs::write(&cfg_path, config).unwrap();
    let read = || {
        ok(&["sweep", "--config", &cfg_path]);
        let text = std::fs::read_to_string(dir.path().join("out/results.csv")).unwrap();
        let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
        let wall = header.iter().position(|h| h.contains("wall")).unwrap();
        text.lines()
            .map(|l| l.split(',').enumerate().filter(|(i, _)| *i != wall).map(|(_, v)| v).collect::<Vec<_>>().join(","))
            .collect::<Vec<_>>()
    };
    let first = read();
    assert_eq!(first.len(), 5);
    assert_eq!(first, read());
    assert!(dir.path().join("out/summary.csv").exists());
}

#[test]
fn diagnose_needs_a_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let mdp = generate(dir.path(), "m.json", "7");
    let data = collect(&mdp, dir.path(), "64");
    let run = p(dir.path(), "run.json");
    ok(&["solve", "--mdp", &mdp, "--data", &data, "--auto-tune", "--T", "10", "--out", &run]);
    let out = fogas(&["diagnose", "--mdp", &mdp, "--data", &data, "--run", &run, "--out", &p(dir.path(), "g.csv")]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--record-trajectory"));
}

#[test]
fn diagnose_reports_small_residuals() {
    let dir = tempfile::tempdir().unwrap();
    let mdp = generate(dir.path(), "m.json", "8");
    let data = collect(&mdp, dir.path(), "128");
    let run = p(dir.path(), "run.json");
    ok(&["solve", "--mdp", &mdp, "--data", &data, "--auto-tune", "--T", "50", "--record-trajectory", "--out", &run]);
    let gap = p(dir.path(), "gap.csv");
    let out = ok(&["diagnose", "--mdp", &mdp, "--data", &data, "--run", &run, "--out", &gap]);
    assert!(field(&out, "decomposition_residual") <= 1e-8);
    assert!(field(&out, "identity_residual") <= 1e-8);
    assert_eq!(std::fs::read_to_string(gap).unwrap().lines().count(), 2);
}

#[test]
fn zero_reward_gap_vanishes() {
    let dir = tempfile::tempdir().unwrap();
    let g = LinearMdp::generate(5, 3, 4, 0.9, 9).unwrap();
    let zero = LinearMdp::new(5, 3, g.phi().clone(), g.psi().clone(), DVector::zeros(4), 0.9, 0).unwrap();
    let mdp = p(dir.path(), "zero.json");
    zero.save(&mdp).unwrap();
    let data = collect(&mdp, dir.path(), "64");
    let run = p(dir.path(), "run.json");
    ok(&["solve", "--mdp", &mdp, "--data", &data, "--auto-tune", "--T", "30", "--record-trajectory", "--out", &run]);
    let out = ok(&["diagnose", "--mdp", &mdp, "--data", &data, "--run", &run, "--out", &p(dir.path(), "gap.csv")]);
    assert!(field(&out, "gap").abs() <= 1e-10);
}

#[test]
fn manual_radius_skips_identity_assertion() {
    let dir = tempfile::tempdir().unwrap();
    let mdp = generate(dir.path(), "m.json", "10");
    let data = collect(&mdp, dir.path(), "64");
    let run = p(dir.path(), "run.json");
    ok(&[
        "solve", "--mdp", &mdp, "--data", &data, "--rates", "0.1,0.5,0.05,0.01", "--d-theta", "1.0", "--T", "20",
        "--record-trajectory", "--out", &run,
    ]);
    let out = ok(&["diagnose", "--mdp", &mdp, "--data", &data, "--run", &run, "--out", &p(dir.path(), "gap.csv")]);
    assert!(field(&out, "decomposition_residual") <= 1e-8);
    assert!(field(&out, "identity_residual").is_finite());
}

#[test]
fn rates_need_four_values() {
    let dir = tempfile::tempdir().unwrap();
    let mdp = generate(dir.path(), "m.json", "11");
    let data = collect(&mdp, dir.path(), "16");
    let out = fogas(&["solve", "--mdp", &mdp, "--data", &data, "--rates", "0.1,0.1,0.1", "--T", "5", "--out", &p(dir.path(), "r.json")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("4 values"));
}
