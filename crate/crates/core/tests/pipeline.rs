use std::fs;
use std::process::Command;

use polyfeedback::experiment::{replay, run_experiment, ExperimentConfig, RunArtifact};
use polyfeedback::Error;

const SMALL_LC: &str = r#"{
    "benchmark": "lc_circuit",
    "training_sizes": [1, 2],
    "test_size": 4,
    "optimizer": {"max_iterations": 30},
    "write_trajectories": true
}"#;

fn config_in(dir: &std::path::Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_json(SMALL_LC).unwrap();
    cfg.output_dir = Some(dir.to_path_buf());
    cfg
}

#[test]
fn runs_are_deterministic_and_complete() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let runs_a = run_experiment(&config_in(a.path())).unwrap();
    let runs_b = run_experiment(&config_in(b.path())).unwrap();
    assert_eq!(runs_a.len(), 2);
    for name in ["run000_model.json", "run001_model.json", "run001_pairs.csv", "errors.csv", "support.csv"] {
        let x = fs::read(a.path().join(name)).unwrap();
        let y = fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name} differs between identical runs");
    }
    assert_eq!(
        fs::read_dir(a.path().join("run000_trajectories")).unwrap().count(),
        8,
        "one learned and one oracle trajectory per test point"
    );
    for (x, y) in runs_a.iter().zip(&runs_b) {
        assert_eq!(x.model, y.model);
        assert!(x.trace.is_monotone());
    }
    let errors = fs::read_to_string(a.path().join("errors.csv")).unwrap();
    assert_eq!(errors.lines().count(), 1 + 2 * 2);
}

#[test]
fn artifacts_round_trip_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let runs = run_experiment(&config_in(dir.path())).unwrap();
    let stored = RunArtifact::from_file(&dir.path().join("run001.json")).unwrap();
    assert_eq!(stored, runs[1]);
    let again = replay(&stored, None, None).unwrap();
    assert_eq!(Some(again.sse_u), stored.test.as_ref().map(|t| t.sse_u));
    assert!(matches!(replay(&stored, None, Some(0)), Err(Error::InvalidArgument(_))));
    let mut wrong = stored.clone();
    wrong.format = "something-else/1".into();
    assert!(matches!(RunArtifact::from_json(&wrong.to_json().unwrap()), Err(Error::Format(_))));
}

#[test]
fn warm_start_from_stored_model() {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&config_in(dir.path())).unwrap();
    let warm = format!(
        r#"{{"benchmark": "lc_circuit", "training_sizes": [2], "test_size": 2, "optimizer": {{"max_iterations": 1}},
            "initial_guess": {{"warm_start_from": {:?}}}, "evaluate_training": false}}"#,
        dir.path().join("run001.json")
    );
    let runs = run_experiment(&ExperimentConfig::from_json(&warm).unwrap()).unwrap();
    let first = &runs[0].trace.rows[0];
    let stored = RunArtifact::from_file(&dir.path().join("run001.json")).unwrap();
    let end = stored.trace.last().unwrap();
    assert!((first.objective - end.objective).abs() <= 1e-12 * end.objective.abs());
}

#[test]
fn cli_exit_codes_and_output() {
    let exe = env!("CARGO_BIN_EXE_polyfeedback");
    let list = Command::new(exe).args(["benchmarks", "list"]).output().unwrap();
    assert!(list.status.success());
    let text = String::from_utf8(list.stdout).unwrap();
    assert!(text.contains("cucker_smale") && text.contains("|X|=650"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"benchmark": "lc_circuit", "gamma": [1e-3, 1e-2]}"#).unwrap();
    let out = Command::new(exe).arg("run").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let good = dir.path().join("good.json");
    fs::write(&good, SMALL_LC).unwrap();
    let runs = dir.path().join("runs");
    let out = Command::new(exe).arg("run").arg(&good).arg("--output").arg(&runs).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = String::from_utf8(out.stdout).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert!(summary.starts_with("size,degree,gamma,support"));

    let out = Command::new(exe).arg("replay").arg(runs.join("run000.json")).args(["--count", "2"]).output().unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["sse_u"].as_f64().unwrap() >= 0.0);
}
