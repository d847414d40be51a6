use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn domlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_domlab")).args(args).output().unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("domlab-cli-{}-{name}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn list_experiments_shows_every_shipped_config() {
    let o = domlab(&["list-experiments"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for e in domlab::experiment::SHIPPED {
        assert!(text.contains(e.name), "{} missing", e.name);
    }
}

#[test]
fn validate_accepts_shipped_and_rejects_broken() {
    assert_eq!(domlab(&["validate", "--config", "square_dmd"]).status.code(), Some(0));

    let dir = scratch("validate");
    let mut cfg = domlab::experiment::shipped("sine_theory_check").unwrap();
    cfg.reservoir.d = 3;
    let path = dir.join("bad.json");
    fs::write(&path, cfg.to_json()).unwrap();
    let o = domlab(&["validate", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("reservoir.d"));

    assert_eq!(domlab(&["validate", "--config", "no_such_experiment"]).status.code(), Some(1));
    fs::remove_dir_all(dir).ok();
}

#[test]
fn run_writes_artifacts_and_honours_flags() {
    let dir = scratch("run");
    let out = dir.join("square");
    let o = domlab(&["run", "--config", "square_dmd", "--seed", "9", "--out", out.to_str().unwrap(), "--quiet"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty());
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["seed"], 9);
    for name in ["dmd.csv", "spectrum.csv", "theory.json", "config.toml", "input.csv"] {
        assert!(out.join(name).exists(), "{name}");
    }
    let dmd = fs::read_to_string(out.join("dmd.csv")).unwrap();
    assert!(dmd.starts_with("# domlab-csv v1 dmd\n"));
    fs::remove_dir_all(dir).ok();
}

#[test]
fn failed_expectation_exits_2() {
    let dir = scratch("fail");
    let mut cfg = domlab::experiment::shipped("sine_theory_check").unwrap();
    cfg.expect.linear_max_re_at_most = Some(-100.0);
    let path = dir.join("strict.toml");
    fs::write(&path, cfg.to_toml()).unwrap();
    let o = domlab(&["run", "--config", path.to_str().unwrap(), "--out", dir.join("out").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("FAILED"));
    fs::remove_dir_all(dir).ok();
}
