use std::fs;
use std::path::PathBuf;

use domlab::experiment::{self, duplicate_channel, BlockStatus, ExperimentConfig};
use domlab::Error;

fn scratch(name: &str) -> PathBuf {
    std::env::temp_dir().join(format!("domlab-exp-{}-{name}", std::process::id()))
}

#[test]
fn json_and_toml_configs_are_equivalent() {
    for e in experiment::SHIPPED {
        let cfg = experiment::shipped(e.name).unwrap();
        let back = ExperimentConfig::parse(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }
}

#[test]
fn every_check_carries_its_tolerance() {
    let dir = scratch("tol");
    let rep = experiment::run(&experiment::shipped("sine_theory_check").unwrap(), &dir).unwrap();
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    let mut seen = 0;
    for (_, block) in json["blocks"].as_object().unwrap() {
        for c in block["checks"].as_array().unwrap() {
            assert!(!c["tolerance"].is_null(), "{c}");
            assert!(c["relation"].is_string());
            seen += 1;
        }
    }
    assert!(seen >= 10);
    assert!(rep.failures().is_empty(), "{:?}", rep.failures());
    fs::remove_dir_all(dir).ok();
}

#[test]
fn block_error_leaves_siblings_intact() {
    // two identical channels make U rank deficient, so exact DMD fails
    let mut cfg = experiment::shipped("sine_theory_check").unwrap();
    cfg.analysis.rootlocus = false;
    let cfg = duplicate_channel(&cfg, 0).unwrap();
    let dir = scratch("degrade");
    let rep = experiment::run(&cfg, &dir).unwrap();
    assert_eq!(rep.block("dmd").unwrap().status, BlockStatus::Error);
    assert!(rep.block("dmd").unwrap().error.as_deref().unwrap().contains("rank deficient"));
    // the closed form needs full-rank B1 as well
    assert_eq!(rep.block("theory_check").unwrap().status, BlockStatus::Error);
    for name in ["spectrum", "dominance"] {
        let block = rep.block(name).unwrap();
        assert_eq!(block.status, BlockStatus::Ok, "{name}: {:?}", block.checks);
    }
    assert!(dir.join("spectrum.csv").exists());
    assert!(dir.join("dominance.json").exists());
    fs::remove_dir_all(dir).ok();
}

#[test]
fn duplicated_channel_keeps_coupling_rank() {
    let mut base = experiment::shipped("sine_theory_check").unwrap();
    base.analysis = Default::default();
    base.analysis.rootlocus = true;
    let dup = duplicate_channel(&base, 1).unwrap();
    assert_eq!(dup.reservoir.d, base.reservoir.d + 1);
    let rank = |cfg: &ExperimentConfig, tag: &str| {
        let dir = scratch(tag);
        let rep = experiment::run(cfg, &dir).unwrap();
        fs::remove_dir_all(dir).ok();
        rep.block("rootlocus").unwrap().data["coupling_rank"].as_u64().unwrap()
    };
    assert_eq!(rank(&base, "rank_a"), 2);
    assert_eq!(rank(&dup, "rank_b"), 2);
    assert!(matches!(duplicate_channel(&base, 5), Err(Error::BadChannel { channel: 5, d: 2 })));
}

#[test]
fn seed_changes_w_in_but_not_linear_spectrum() {
    let mut cfg = experiment::shipped("sine_theory_check").unwrap();
    cfg.analysis = Default::default();
    cfg.analysis.spectrum = true;
    let (a, b) = (scratch("seed_a"), scratch("seed_b"));
    let ra = experiment::run(&cfg, &a).unwrap();
    cfg.seed += 1;
    let rb = experiment::run(&cfg, &b).unwrap();
    assert_ne!(fs::read(a.join("reservoir_linear.json")).unwrap(), fs::read(b.join("reservoir_linear.json")).unwrap());
    let shifted = |r: &experiment::ExperimentReport| r.block("spectrum").unwrap().data["linear"]["shifted"].clone();
    let (sa, sb) = (shifted(&ra), shifted(&rb));
    for (x, y) in sa.as_array().unwrap().iter().zip(sb.as_array().unwrap()) {
        for k in 0..2 {
            assert!((x[k].as_f64().unwrap() - y[k].as_f64().unwrap()).abs() < 1e-8, "{sa} vs {sb}");
        }
    }
    fs::remove_dir_all(a).ok();
    fs::remove_dir_all(b).ok();
}
