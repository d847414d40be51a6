//! Run a shipped experiment through the library and summarize its blocks.
//!
//! `cargo run --example run_experiment -- square_dmd`

use domlab::experiment;

fn main() {
    let name = std::env::args().nth(1).unwrap_or_else(|| "sine_theory_check".into());
    let cfg = experiment::resolve(&name).unwrap_or_else(|e| {
        eprintln!("{e}");
        std::process::exit(1);
    });
    let out = std::env::temp_dir().join(format!("domlab-example-{}", cfg.name));
    let report = experiment::run(&cfg, &out).unwrap();
    for (block, r) in &report.blocks {
        let failed: Vec<_> = r.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        println!("{block:<14} {:?} {} checks, failed {failed:?}", r.status, r.checks.len());
    }
    println!("artifacts in {}", out.display());
}
