//! End-to-end runs of the `crushed-ice` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SMALL_2D: &str = r#"
n = 2
eps = [0.5, 0.25]
d_rule = "0.05"
kappa = 0.2
h = 0.015625
heuristic = true
seed = 7
times = [0.0, 0.1]
"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crushed-ice"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn random_closeness_reports_all_pass() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &[
            "--out-dir",
            "o",
            "closeness",
            "--instance",
            "random",
            "--seed",
            "7",
            "--count",
            "100",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let reports = json(&dir.path().join("o/closeness.json"));
    let reports = reports.as_array().unwrap();
    assert_eq!(reports.len(), 100);
    for r in reports {
        let ok = &r["report"]["bound_ok"];
        for key in ["resolvent", "extension", "sandwich", "reverse"] {
            assert_eq!(ok[key], Value::Bool(true), "{r}");
        }
    }
    let manifest = json(&dir.path().join("o/closeness.manifest.json"));
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["passed"], true);
}

#[test]
fn pde_closeness_places_holes() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "--out-dir",
        "o",
        "closeness",
        "--instance",
        "pde",
        "--eps",
        "0.25",
        "--d",
        "0.0625",
        "--h",
        "0.125",
        "--min-resolution",
        "0.5",
    ];
    let out = run(dir.path(), &args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let r = &json(&dir.path().join("o/closeness.json"))[0];
    assert_eq!(r["dim"], 343);
    assert_eq!(r["report"]["constants"]["c2"], 0.0);
}

#[test]
fn converge_csv_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), SMALL_2D).unwrap();
    for (out_dir, jobs) in [("a", "1"), ("b", "2")] {
        let out = run(
            dir.path(),
            &[
                "--config",
                "c.toml",
                "--out-dir",
                out_dir,
                "--jobs",
                jobs,
                "converge",
            ],
        );
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let a = fs::read(dir.path().join("a/converge.csv")).unwrap();
    let b = fs::read(dir.path().join("b/converge.csv")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);
    let (ma, mb) = (
        json(&dir.path().join("a/converge.manifest.json")),
        json(&dir.path().join("b/converge.manifest.json")),
    );
    assert_eq!(ma["config_hash"], mb["config_hash"]);
    assert_eq!(
        ma["files"],
        serde_json::json!(["converge.csv", "converge.json"])
    );
    // the config file is left untouched
    assert_eq!(
        fs::read_to_string(dir.path().join("c.toml")).unwrap(),
        SMALL_2D
    );
}

#[test]
fn seed_override_changes_the_hash() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), SMALL_2D).unwrap();
    let mut hashes = Vec::new();
    for (out_dir, seed) in [("a", "7"), ("b", "8")] {
        let out = run(
            dir.path(),
            &[
                "--config",
                "c.toml",
                "--out-dir",
                out_dir,
                "--seed",
                seed,
                "solve",
            ],
        );
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        hashes.push(
            json(&dir.path().join(format!("{out_dir}/solve.manifest.json")))["config_hash"].clone(),
        );
    }
    assert_ne!(hashes[0], hashes[1]);
    let summary = json(&dir.path().join("a/solve.json"));
    assert_eq!(summary["eps"], 0.5);
    assert!(dir.path().join("a/solve_perforated.csv").exists());
}

#[test]
fn invalid_configs_exit_with_status_one() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("beta.toml"),
        "n = 4\neps = [0.5]\nkappa = 0.1\n",
    )
    .unwrap();
    fs::write(
        dir.path().join("place.json"),
        r#"{"n": 3, "eps": [0.25], "d_rule": "0.1", "kappa": 0.3}"#,
    )
    .unwrap();
    fs::write(
        dir.path().join("typo.toml"),
        "n = 3\neps = [0.5]\nkapa = 0.1\n",
    )
    .unwrap();
    for (file, needle) in [
        ("beta.toml", "beta"),
        ("place.json", "layout violation"),
        ("typo.toml", "kapa"),
    ] {
        let out = run(dir.path(), &["--config", file, "converge"]);
        assert_eq!(out.status.code(), Some(1), "{file}");
        let err = String::from_utf8_lossy(&out.stderr).to_lowercase();
        assert!(err.contains(needle), "{file}: {err}");
    }
    let out = run(dir.path(), &["converge"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn capacity_of_a_disk_matches_the_formula() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &[
            "--out-dir",
            "o",
            "capacity",
            "--n",
            "2",
            "--d",
            "0.05",
            "--h",
            "0.001953125",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let r = json(&dir.path().join("o/capacity.json"));
    let exact = 2.0 * std::f64::consts::PI / 0.05f64.ln().abs();
    assert!(
        (r["cap_corrected"].as_f64().unwrap() - exact).abs() <= 0.02 * exact,
        "{r}"
    );
    assert!(r["relative_errors"]["flux_vs_energy"].as_f64().unwrap() <= 0.05);
}

#[test]
fn failed_checks_exit_with_status_two() {
    let dir = tempfile::tempdir().unwrap();
    // A loose grid misses the analytic value by more than the requested 0.1%.
    fs::write(
        dir.path().join("cap.toml"),
        "n = 2\nd = 0.05\nh = 0.00625\nrel_tol = 0.001\n",
    )
    .unwrap();
    let out = run(
        dir.path(),
        &["--config", "cap.toml", "--out-dir", "o", "capacity"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(
        json(&dir.path().join("o/capacity.manifest.json"))["passed"],
        false
    );
}
