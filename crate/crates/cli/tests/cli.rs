//! End-to-end tests of the `cbf-sim` binary: artifact layout, exit codes,
//! determinism, and the documented CSV schemas.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cbf-sim"))
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("cbf-sim-test-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawning cbf-sim");
    assert!(
        out.status.success(),
        "expected success, got {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(cmd: &mut Command) -> i32 {
    cmd.output().expect("spawning cbf-sim").status.code().expect("no exit code")
}

/// Strips the wall-clock solve-time column, the only nondeterministic field.
fn without_solve_us(steps_csv: &str) -> String {
    let mut lines = steps_csv.lines();
    let header = lines.next().unwrap_or_default();
    let solve_col = header
        .split(',')
        .position(|c| c == "solve_us")
        .expect("steps.csv should have a solve_us column");
    std::iter::once(header.to_string())
        .chain(lines.map(|line| {
            line.split(',')
                .enumerate()
                .filter(|(i, _)| *i != solve_col)
                .map(|(_, f)| f)
                .collect::<Vec<_>>()
                .join(",")
        }))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn run_writes_artifacts_and_exits_zero() {
    let dir = temp_dir("run-happy");
    let config = write_config(&dir, "cfg.json", r#"{"preset": "easy", "sim": {"duration": 0.5}}"#);
    let out_dir = dir.join("out");
    run_ok(bin().args(["run", "--config"]).arg(&config).arg("--out").arg(&out_dir));

    for artifact in ["steps.csv", "metrics.json", "config.json"] {
        assert!(out_dir.join(artifact).is_file(), "missing {artifact}");
    }
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["ticks"], 500);
    assert_eq!(metrics["emergency_ticks"], 0);

    // The echoed config is itself a runnable config that reproduces the run.
    let steps_a = fs::read_to_string(out_dir.join("steps.csv")).unwrap();
    let echo_out = dir.join("echo_out");
    run_ok(
        bin()
            .args(["run", "--config"])
            .arg(out_dir.join("config.json"))
            .arg("--out")
            .arg(&echo_out),
    );
    let steps_b = fs::read_to_string(echo_out.join("steps.csv")).unwrap();
    assert_eq!(without_solve_us(&steps_a), without_solve_us(&steps_b));
}

#[test]
fn invalid_configs_exit_one_with_field_in_message() {
    let dir = temp_dir("run-invalid");
    let bad = write_config(
        &dir,
        "bad.json",
        r#"{"preset": "easy",
            "obstacles": [{"name": "x", "radius": 0.1, "priority": 0, "gamma": -1.0,
                           "motion": {"type": "static"},
                           "placement": {"type": "fixed", "position": [2, 0, 0]}}]}"#,
    );
    let out = bin().args(["run", "--config"]).arg(&bad).arg("--out").arg(dir.join("o")).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("gamma"), "message should name the field: {stderr}");

    let not_json = write_config(&dir, "nj.json", "not json");
    let out = bin().args(["run", "--config"]).arg(&not_json).arg("--out").arg(dir.join("o2")).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 1"), "message should be line-anchored: {stderr}");

    let missing = dir.join("does-not-exist.json");
    let mut cmd = bin();
    cmd.args(["run", "--config"]).arg(&missing).arg("--out").arg(dir.join("o3"));
    assert_eq!(exit_code(&mut cmd), 1);
}

/// An antipodal pair scripted to close on the end effector faster than the
/// barrier decay can absorb: the strict program is infeasible the moment both
/// approach rows conflict, so the run freezes and exits 2.
#[test]
fn strict_closing_pinch_exits_two_and_logs_emergency() {
    let dir = temp_dir("run-pinch");
    let config = write_config(
        &dir,
        "pinch.json",
        r#"{
            "name": "pinch",
            "chain": {"preset": "planar2"},
            "trajectory": {"type": "hold", "position": [0.4, 0.0, 0.0]},
            "obstacles": [
                {"name": "above", "radius": 0.1, "priority": 0, "gamma": 1.0,
                 "motion": {"type": "scripted",
                            "waypoints": [[0.0, 0.4, 0.3, 0.0], [1.0, 0.4, 0.05, 0.0]]},
                 "placement": {"type": "fixed", "position": [0.4, 0.3, 0.0]}},
                {"name": "below", "radius": 0.1, "priority": 0, "gamma": 1.0,
                 "motion": {"type": "scripted",
                            "waypoints": [[0.0, 0.4, -0.3, 0.0], [1.0, 0.4, -0.05, 0.0]]},
                 "placement": {"type": "fixed", "position": [0.4, -0.3, 0.0]}}
            ],
            "filter": {"mode": "strict", "margin": 0.05},
            "sim": {"duration": 1.0}
        }"#,
    );
    let out_dir = dir.join("out");
    let mut cmd = bin();
    cmd.args(["run", "--config"]).arg(&config).arg("--out").arg(&out_dir);
    assert_eq!(exit_code(&mut cmd), 2);

    let steps = fs::read_to_string(out_dir.join("steps.csv")).unwrap();
    assert!(steps.lines().any(|l| l.ends_with("emergency") || l.contains(",emergency,")));
}

#[test]
fn batch_is_deterministic_and_consistent_with_run() {
    let dir = temp_dir("batch");
    let config = write_config(&dir, "cfg.json", r#"{"preset": "hard", "sim": {"duration": 0.5}}"#);

    let out_a = dir.join("a");
    let out_b = dir.join("b");
    for out in [&out_a, &out_b] {
        run_ok(
            bin()
                .args(["batch", "--config"])
                .arg(&config)
                .args(["--seeds", "3", "--workers", "2", "--out"])
                .arg(out),
        );
    }
    let batch_a = fs::read_to_string(out_a.join("batch.csv")).unwrap();
    let batch_b = fs::read_to_string(out_b.join("batch.csv")).unwrap();
    assert_eq!(batch_a, batch_b, "batch reruns must be bit-identical");
    assert_eq!(batch_a.lines().count(), 4, "header plus one row per seed");

    // Row for seed 0 equals a plain run with seed 0.
    let run_out = dir.join("run0");
    run_ok(
        bin()
            .args(["run", "--config"])
            .arg(&config)
            .args(["--seed", "0", "--out"])
            .arg(&run_out),
    );
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run_out.join("metrics.json")).unwrap()).unwrap();
    let header: Vec<&str> = batch_a.lines().next().unwrap().split(',').collect();
    let row0: Vec<&str> = batch_a.lines().nth(1).unwrap().split(',').collect();
    let field = |name: &str| row0[header.iter().position(|h| *h == name).unwrap()];
    assert_eq!(field("seed"), "0");
    assert_eq!(field("ok"), "true");
    let rmse: f64 = field("rmse").parse().unwrap();
    assert!((rmse - metrics["rmse"].as_f64().unwrap()).abs() < 1e-12);
    let d_min_red: f64 = field("red_d_min").parse().unwrap();
    assert!((d_min_red - metrics["d_min"]["red"].as_f64().unwrap()).abs() < 1e-12);
}

#[test]
fn sweep_beta_emits_monotone_relaxation_table() {
    let dir = temp_dir("sweep");
    let config = write_config(&dir, "cfg.json", r#"{"preset": "hard", "sim": {"duration": 0.5}}"#);
    let out_dir = dir.join("out");
    run_ok(
        bin()
            .args(["sweep-beta", "--config"])
            .arg(&config)
            .args(["--betas", "10,100,1000,10000,100000,1000000", "--out"])
            .arg(&out_dir),
    );
    let sweep = fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    let mut deltas = Vec::new();
    let mut distances = Vec::new();
    for line in sweep.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        deltas.push(fields[2].parse::<f64>().unwrap());
        distances.push(fields[3].parse::<f64>().unwrap());
    }
    assert_eq!(deltas.len(), 6);
    for pair in deltas.windows(2) {
        assert!(pair[1] <= pair[0] + 1e-8, "delta_max must not grow with beta: {deltas:?}");
    }
    assert!(
        distances.last().unwrap() < distances.first().unwrap(),
        "the command should approach the strict solution: {distances:?}"
    );

    // Empty penalty list is a usage error, not a crash.
    let mut cmd = bin();
    cmd.args(["sweep-beta", "--config"]).arg(&config).arg("--out").arg(dir.join("o2"));
    assert_eq!(exit_code(&mut cmd), 1);
}

#[test]
fn coverage_flags_squeeze_samples_but_not_far_field() {
    let dir = temp_dir("coverage");
    let squeeze = write_config(
        &dir,
        "squeeze.json",
        r#"{"preset": "hard", "coverage": {"template": "squeeze"}}"#,
    );
    let squeeze_out = dir.join("squeeze_out");
    run_ok(
        bin()
            .args(["coverage", "--config"])
            .arg(&squeeze)
            .args(["--samples", "200", "--seed", "7", "--out"])
            .arg(&squeeze_out),
    );
    let rows: Vec<String> = fs::read_to_string(squeeze_out.join("coverage.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(String::from)
        .collect();
    assert!(!rows.is_empty(), "squeeze template should produce infeasible samples");
    for row in &rows {
        assert!(row.contains("infeasible,optimal"), "relaxation should always recover: {row}");
    }

    let far = write_config(
        &dir,
        "far.json",
        r#"{"preset": "hard", "coverage": {"template": "far_field", "distance": 5.0}}"#,
    );
    let far_out = dir.join("far_out");
    run_ok(
        bin()
            .args(["coverage", "--config"])
            .arg(&far)
            .args(["--samples", "200", "--seed", "7", "--out"])
            .arg(&far_out),
    );
    let far_rows = fs::read_to_string(far_out.join("coverage.csv")).unwrap().lines().count();
    assert_eq!(far_rows, 1, "far-field template should flag nothing (header only)");

    let mut cmd = bin();
    cmd.args(["coverage", "--config"])
        .arg(&squeeze)
        .args(["--samples", "0", "--out"])
        .arg(dir.join("o"));
    assert_eq!(exit_code(&mut cmd), 1);
}
