use std::path::PathBuf;
use std::process::{Command, Output};

fn cosim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cosim"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn patrol() -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "core", "scenarios", "patrol.json"].iter().collect();
    p.to_str().unwrap().to_owned()
}

#[test]
fn validate_accepts_the_patrol_scenario() {
    let out = cosim(&["validate", "--scenario", &patrol()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("ok"));
}

#[test]
fn broken_scenarios_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{\"duration_ns\": }").unwrap();
    let path = path.to_str().unwrap();
    for cmd in ["validate", "run"] {
        let out = cosim(&[cmd, "--scenario", path]);
        assert_eq!(out.status.code(), Some(1), "{cmd}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    }
    let missing = cosim(&["validate", "--scenario", "/nonexistent/scenario.json"]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn overrides_are_validated() {
    let out = cosim(&["run", "--scenario", &patrol(), "--duration-ns", "1500000"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("1500000"), "{err}");
}

#[test]
fn plots_require_an_output_directory() {
    let out = cosim(&["run", "--scenario", &patrol(), "--plots"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_writes_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = cosim(&[
        "run", "--scenario", &patrol(), "--seed", "11", "--duration-ns", "1000000000", "--out", d, "--plots",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["rate.csv", "delay.csv", "rate_hist.csv", "delay_hist.csv", "scatter.csv", "run_summary.json"] {
        assert!(dir.path().join(name).is_file(), "{name}");
    }
    let summary = std::fs::read_to_string(dir.path().join("run_summary.json")).unwrap();
    assert!(summary.contains("\"seed\": 11"), "{summary}");
    assert!(String::from_utf8_lossy(&out.stdout).contains("windows 1000"));
}
