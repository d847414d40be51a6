use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use domlab::experiment::{self, BlockStatus, SHIPPED};
use domlab::Error;

#[derive(Parser)]
#[command(name = "domlab", version, about = "Reservoir spectra, DMD correspondences and dominance checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its artifacts.
    Run {
        /// Config file path (TOML or JSON) or shipped experiment name.
        #[arg(long)]
        config: String,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Parse and validate a config without running it.
    Validate {
        #[arg(long)]
        config: String,
        #[arg(long)]
        quiet: bool,
    },
    /// List the shipped experiments.
    ListExperiments,
}

fn config_error(e: Error) -> ExitCode {
    eprintln!("domlab: {e}");
    ExitCode::from(1)
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::ListExperiments => {
            for e in SHIPPED {
                let cfg = experiment::shipped(e.name).expect("shipped config");
                println!("{:<26} {}", e.name, cfg.description);
            }
            ExitCode::SUCCESS
        }
        Command::Validate { config, quiet } => match experiment::resolve(&config) {
            Ok(cfg) => {
                if !quiet {
                    println!("{}: ok", cfg.name);
                }
                ExitCode::SUCCESS
            }
            Err(e) => config_error(e),
        },
        Command::Run { config, seed, out, quiet } => {
            let mut cfg = match experiment::resolve(&config) {
                Ok(c) => c,
                Err(e) => return config_error(e),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let out = out.unwrap_or_else(|| cfg.output_dir.clone());
            let report = match experiment::run(&cfg, &out) {
                Ok(r) => r,
                Err(e @ Error::Config { .. }) => return config_error(e),
                Err(e) => {
                    eprintln!("domlab: {e}");
                    return ExitCode::from(2);
                }
            };
            if !quiet {
                for (name, block) in &report.blocks {
                    let status = match block.status {
                        BlockStatus::Ok => "ok",
                        BlockStatus::Failed => "FAILED",
                        BlockStatus::Error => "ERROR",
                    };
                    println!("{name:<14} {status}");
                    if let Some(err) = &block.error {
                        println!("    {err}");
                    }
                    for c in &block.checks {
                        let mark = if c.passed { " " } else { "!" };
                        println!("  {mark} {:<40} {:.6e} {} {}", c.name, c.value, c.relation, c.tolerance);
                    }
                }
                println!("artifacts in {}", out.display());
            }
            if report.failures().is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
    }
}
