use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gridsens(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridsens"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const RING: &str = "branch_id,from_bus,to_bus,reactance_pu\n1,1,2,1.0\n2,2,3,1.0\n3,1,3,1.0\n";

#[test]
fn ptdf_prints_ring_matrix() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("ring3.csv"), RING).unwrap();
    let out = gridsens(&["ptdf", "ring3.csv"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows: Vec<Vec<f64>> = stdout(&out)
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 3);
    let col2: Vec<f64> = rows.iter().map(|r| r[1]).collect();
    for (a, b) in col2.iter().zip([-2.0 / 3.0, 1.0 / 3.0, -1.0 / 3.0]) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(String::from_utf8_lossy(&out.stderr).contains("slack"));
}

#[test]
fn usage_and_data_errors_have_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(gridsens(&["ptdf", "--bogus"], dir.path()).status.code(), Some(2));
    assert_eq!(gridsens(&["frobnicate"], dir.path()).status.code(), Some(2));
    assert_eq!(gridsens(&["ptdf", "missing.csv"], dir.path()).status.code(), Some(3));
    fs::write(dir.path().join("bad.csv"), "branch_id,from_bus,to_bus,reactance_pu\n1,1,2,0\n").unwrap();
    let out = gridsens(&["ptdf", "bad.csv"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("branch 1"));
    fs::write(
        dir.path().join("split.csv"),
        "branch_id,from_bus,to_bus,reactance_pu\n1,1,2,0.1\n2,3,4,0.1\n",
    )
    .unwrap();
    assert_eq!(gridsens(&["ptdf", "split.csv"], dir.path()).status.code(), Some(3));
}

fn synth(dir: &Path, scenario: &str) {
    fs::write(dir.join("scenario.json"), scenario).unwrap();
    let out = gridsens(&["synth", "wecc9", "scenario.json", "-o", "stream.csv"], dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("stream.csv.truth.json").exists());
}

#[test]
fn least_squares_on_short_window_flags_underdetermined() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), r#"{"steps": 20, "seed": 3}"#);
    let out = gridsens(&["estimate", "ls", "stream.csv", "--window", "1:5", "--out", "ls"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let diag: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("ls/diagnostics.json")).unwrap()).unwrap();
    assert_eq!(diag["underdetermined"], serde_json::json!(true));
    for f in ["H.csv", "O.csv", "trace.csv"] {
        assert!(dir.path().join("ls").join(f).exists(), "{f}");
    }
}

#[test]
fn pipeline_is_reproducible() {
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        synth(
            dir.path(),
            r#"{"steps": 40, "seed": 11, "flow_noise_sd": 0.1, "outlier_rate": 0.05, "outlier_amplitude": [30, 60]}"#,
        );
        let est = gridsens(&["estimate", "robust", "stream.csv", "--window", "11:28", "--out", "est"], dir.path());
        assert!(est.status.success(), "{}", String::from_utf8_lossy(&est.stderr));
        let truth = gridsens(&["ptdf", "wecc9"], dir.path());
        fs::write(dir.path().join("truth.csv"), truth.stdout).unwrap();
        let eval = gridsens(&["eval", "est/H.csv", "truth.csv"], dir.path());
        assert!(eval.status.success());
        let text = stdout(&eval);
        assert!(text.lines().count() == 11, "{text}");
        text
    };
    assert_eq!(run(), run());
}

#[test]
fn seed_flag_changes_stream() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("s.json"), r#"{"steps": 5, "seed": 1}"#).unwrap();
    gridsens(&["synth", "wecc9", "s.json", "-o", "a.csv"], dir.path());
    gridsens(&["--seed", "2", "synth", "wecc9", "s.json", "-o", "b.csv"], dir.path());
    gridsens(&["synth", "wecc9", "s.json", "-o", "c.csv", "--seed", "1"], dir.path());
    let read = |f: &str| fs::read_to_string(dir.path().join(f)).unwrap();
    assert_ne!(read("a.csv"), read("b.csv"));
    assert_eq!(read("a.csv"), read("c.csv"));
}

#[test]
fn online_with_regret_writes_regret_series() {
    let dir = tempfile::tempdir().unwrap();
    synth(
        dir.path(),
        r#"{"steps": 80, "seed": 5, "flow_noise_sd": 0.1, "drift": {"amplitude": 0.2, "period": 40}}"#,
    );
    let out = gridsens(
        &["online", "stream.csv", "--m", "18", "--regret", "--gamma", "0.6", "--out", "run"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let series = fs::read_to_string(dir.path().join("run/series.csv")).unwrap();
    assert!(series.starts_with("step,series,value"));
    assert!(series.lines().any(|l| l.split(',').nth(1) == Some("regret_avg")));
    assert!(series.lines().any(|l| l.split(',').nth(1) == Some("re_tracked_avg")));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("run/report.json")).unwrap()).unwrap();
    assert_eq!(report["window"], serde_json::json!(18));
}

#[test]
fn overflowing_flows_exit_with_numerical_code() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), r#"{"steps": 20, "seed": 3}"#);
    let text = fs::read_to_string(dir.path().join("stream.csv")).unwrap();
    let corrupted: String = text
        .lines()
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f[1] == "f" {
                format!("{},f,{},1e300\n", f[0], f[2])
            } else {
                format!("{l}\n")
            }
        })
        .collect();
    fs::write(dir.path().join("bad.csv"), corrupted).unwrap();
    let out = gridsens(&["estimate", "nuclear", "bad.csv", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    let diag: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("o/diagnostics.json")).unwrap()).unwrap();
    assert!(diag["error"].as_str().unwrap().contains("diverged"));
}
