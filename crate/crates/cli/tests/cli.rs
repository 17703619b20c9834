use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn mtdlag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mtdlag"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn simulate(model: &str, n: usize, seed: u64, out: &Path) {
    let o = mtdlag(&[
        "simulate",
        "--model",
        model,
        "--n",
        &n.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.txt");
    let b = dir.path().join("b.txt");
    simulate("experiment1:1,8,8", 100, 7, &a);
    simulate("experiment1:1,8,8", 100, 7, &b);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn simulate_writes_one_binary_symbol_per_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.txt");
    simulate("experiment1:1,8,8", 100_000, 1, &p);
    let text = std::fs::read_to_string(&p).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 100_000);
    assert!(lines.iter().all(|l| *l == "0" || *l == "1"));
}

#[test]
fn invalid_model_reports_violations() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(
        &p,
        r#"{"alphabet":[0,1],"order":1,"lambda":{"0":0.7,"-1":0.7},"p0":[0.5,0.5],
            "kernels":{"-1":[[0.5,0.5],[0.5,0.5]]}}"#,
    )
    .unwrap();
    let o = mtdlag(&["simulate", "--model", p.to_str().unwrap(), "--n", "10"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("invalid model"), "{err}");
}

#[test]
fn fs_on_long_order_reports_three_lags_with_influence() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("w.txt");
    simulate("experiment1:1,8,400", 20_000, 3, &p);
    let o = mtdlag(&[
        "select",
        "--input",
        p.to_str().unwrap(),
        "--method",
        "fs:3",
        "--d",
        "400",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["method"], "fs:3");
    assert_eq!(v["selected"]["lags"].as_array().unwrap().len(), 3);
    let steps = v["trace"]["fs_steps"].as_array().unwrap();
    assert_eq!(steps.len(), 3);
    assert!(steps.iter().all(|s| s["nu_hat"].as_f64().unwrap() >= 0.0));
}

#[test]
fn pcp_without_candidate_set_uses_all_lags() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.txt");
    simulate("experiment1:1,3,4", 5000, 2, &p);
    let o = mtdlag(&[
        "select",
        "--input",
        p.to_str().unwrap(),
        "--method",
        "pcp",
        "--d",
        "4",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let examined: Vec<i64> = v["trace"]["cut"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["lag"].as_i64().unwrap())
        .collect();
    assert_eq!(examined, vec![-1, -2, -3, -4]);
    assert!(v["params"]["thresholds"]["alpha"].as_f64().unwrap() > 0.0);
}

#[test]
fn short_window_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.txt");
    simulate("experiment1:1,3,4", 6, 2, &p);
    let o = mtdlag(&[
        "select",
        "--input",
        p.to_str().unwrap(),
        "--method",
        "fsc:5",
        "--d",
        "8",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("window shorter than order"));
}

#[test]
fn bad_flags_are_usage_errors() {
    assert_eq!(mtdlag(&["select", "--method"]).status.code(), Some(1));
    assert_eq!(mtdlag(&["nonsense"]).status.code(), Some(1));
}

#[test]
fn estimate_csv_has_one_line_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.txt");
    simulate("experiment1:1,3,3", 3000, 5, &p);
    let o = mtdlag(&[
        "estimate",
        "--input",
        p.to_str().unwrap(),
        "--lags",
        "-1,-3",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "context,symbol,p_hat,count,radius");
    assert_eq!(lines.len(), 1 + 4 * 2);
}

#[test]
fn zero_replications_is_a_config_error() {
    let o = mtdlag(&[
        "experiment",
        "--model",
        "experiment1:1,3,3",
        "--method",
        "fsc:2",
        "--n",
        "500",
        "--reps",
        "0",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("replications"));
}

#[test]
fn experiment_output_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = mtdlag(&[
            "experiment",
            "--model",
            "experiment1:1,3,4",
            "--method",
            "fsc:2,fs:2,pcp",
            "--n",
            "300,2000",
            "--reps",
            "20",
            "--seed",
            "11",
            "--alpha-c",
            "0.05",
            "--format",
            "json",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(out).unwrap()
    };
    let a = run("a.json");
    assert_eq!(a, run("b.json"));
    let v: Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 6);
}

#[test]
fn verify_passes_on_small_model() {
    let o = mtdlag(&["verify", "--model", "experiment1:1,3,3", "--reps", "50"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["checks"]
        .as_array()
        .unwrap()
        .iter()
        .all(|c| c["passed"] == true));
}

#[test]
fn verify_detects_corrupted_influence() {
    let o = mtdlag(&[
        "verify",
        "--model",
        "experiment1:1,3,3",
        "--reps",
        "50",
        "--perturb-nu-bar",
        "1e-3",
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn verify_skips_over_budget_models() {
    let o = mtdlag(&["verify", "--model", "experiment1:1,8,30", "--reps", "10"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["skipped"].is_string());
}
