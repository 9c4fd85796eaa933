use std::path::Path;
use std::process::{Command, Output};

fn lab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_errw-lab"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn report(out: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

#[test]
fn minimal_flags_fill_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let o = lab(
        &["check-moments", "--dim", "3", "--radius", "2", "--a", "8", "--seed", "1", "--sweeps", "200", "--burnin", "50"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(dir.path());
    assert_eq!(r["config"]["chains"], 4);
    assert_eq!(r["config"]["radius"], 2);
    assert!(r["build"].as_str().unwrap().starts_with("0.1.0-"));
    for f in ["data.csv", "repro.txt", "ledger.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn zero_weight_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = lab(&["check-ward", "--a", "0"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("`a` must be positive"), "{err}");
}

#[test]
fn alpha_above_one_eighth_is_rejected_for_resistance_bound() {
    let dir = tempfile::tempdir().unwrap();
    let o = lab(&["check-resistance-bound", "--alpha", "0.2"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("`alpha`"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"dim": 3, "sweps": 10}"#).unwrap();
    let o = lab(&["check-ward", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown field `sweps`"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"graph": "triangle", "steps": 5, "seed": 9}"#).unwrap();
    let o = lab(&["simulate-errw", "--config", cfg.to_str().unwrap(), "--steps", "12"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let r = report(dir.path());
    assert_eq!(r["config"]["steps"], 12);
    assert_eq!(r["config"]["seed"], 9);
    assert_eq!(r["result"]["jumps"], 12);
}

#[test]
fn single_edge_ward_reports_four_thirds() {
    let dir = tempfile::tempdir().unwrap();
    let o = lab(
        &["check-ward", "--graph", "edge", "--a", "4", "--m", "1", "--sweeps", "20000", "--burnin", "1000"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(dir.path());
    let bm = &r["result"]["b_moment"];
    let (mean, se) = (bm["mean"].as_f64().unwrap(), bm["stderr"].as_f64().unwrap());
    assert!((mean - 4.0 / 3.0).abs() <= 3.0 * se + 1e-3, "{mean} +- {se}");
    assert!(r["checks"].as_array().unwrap().iter().all(|c| c["verdict"] == "pass"));
}

#[test]
fn escape_from_unit_box_is_certain() {
    let dir = tempfile::tempdir().unwrap();
    let o = lab(&["escape-probability", "--dim", "3", "--radius", "1", "--runs", "500"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let r = report(dir.path());
    assert_eq!(r["result"]["estimate"], 1.0);
    assert_eq!(r["result"]["stderr"], 0.0);
}

#[test]
fn identical_runs_give_identical_csv() {
    let runs: Vec<Vec<u8>> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            let o = lab(
                &["check-fluctuations", "--dim", "2", "--radius", "1", "--a", "4", "--sweeps", "300", "--burnin", "50", "--seed", "7"],
                dir.path(),
            );
            assert_eq!(o.status.code(), Some(0));
            std::fs::read(dir.path().join("data.csv")).unwrap()
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn thread_count_does_not_change_results() {
    let runs: Vec<Vec<u8>> = ["1", "3"]
        .iter()
        .map(|t| {
            let dir = tempfile::tempdir().unwrap();
            let o = lab(
                &["escape-probability", "--dim", "2", "--radius", "3", "--a", "1", "--runs", "3000", "--threads", t],
                dir.path(),
            );
            assert_eq!(o.status.code(), Some(0));
            std::fs::read(dir.path().join("data.csv")).unwrap()
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn repro_line_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let o = lab(&["simulate-vrjp", "--steps", "40", "--seed", "5"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let repro = std::fs::read_to_string(dir.path().join("repro.txt")).unwrap();
    let args: Vec<&str> = repro.split_whitespace().skip(1).collect();
    let first = std::fs::read(dir.path().join("data.csv")).unwrap();
    std::fs::remove_file(dir.path().join("data.csv")).unwrap();
    let again = Command::new(env!("CARGO_BIN_EXE_errw-lab")).args(&args).output().unwrap();
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(std::fs::read(dir.path().join("data.csv")).unwrap(), first);
    let lines = std::fs::read_to_string(dir.path().join("ledger.csv")).unwrap();
    assert_eq!(lines.lines().count(), 3);
}

#[test]
fn weights_file_must_cover_every_edge() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("w.csv");
    std::fs::write(&w, "i,j,a\n0,1,2.0\n1,2,3.0\n").unwrap();
    let o = lab(&["simulate-errw", "--graph", "triangle", "--weights", w.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing"));
    std::fs::write(&w, "i,j,a\n0,1,2.0\n1,2,3.0\n0,2,0.5\n").unwrap();
    let o = lab(&["simulate-errw", "--graph", "triangle", "--weights", w.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0));
}
