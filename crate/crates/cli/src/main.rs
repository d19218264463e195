//! Command-line driver: run configured experiments, run self-check suites.

mod config;
mod output;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use soco::sim::{run_experiment, ExperimentRun};
use soco::verify::{run_suite, SUITES};

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_VERIFY: u8 = 3;

/// Worker-count override for the seed fan-out.
const WORKERS_ENV: &str = "SOCO_WORKERS";

#[derive(Parser)]
#[command(name = "soco", version, about = "Stochastic online convex optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of an experiment and write CSV/SVG outputs.
    Run { config: PathBuf },
    /// Run a self-check suite: pathwise-ons, pathwise-boa, gradients, projections, h2, bounds.
    Verify { suite: String },
    /// Print the reference configuration.
    ExampleConfig,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_workers() {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_VALIDATION);
    }
    match cli.command {
        Command::Run { config } => run(config),
        Command::Verify { suite } => verify(&suite),
        Command::ExampleConfig => {
            print!("{}", config::EXAMPLE);
            ExitCode::SUCCESS
        }
    }
}

fn configure_workers() -> Result<(), String> {
    let Ok(raw) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().map_err(|_| format!("{WORKERS_ENV} must be a positive integer, got '{raw}'"))?;
    if n == 0 {
        return Err(format!("{WORKERS_ENV} must be a positive integer"));
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn run(path: PathBuf) -> ExitCode {
    let cfg = match config::load(&path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: invalid configuration: {e}");
            return ExitCode::from(EXIT_VALIDATION);
        }
    };
    let opts = cfg.search.options();
    let results: Vec<soco::Result<ExperimentRun>> =
        cfg.experiment.seeds.par_iter().map(|&seed| run_experiment(&cfg.experiment, seed, &opts)).collect();

    let mut runs = Vec::with_capacity(results.len());
    for (seed, res) in cfg.experiment.seeds.iter().zip(results) {
        match res {
            Ok(run) => runs.push(run),
            Err(e) => {
                eprintln!("error: seed {seed}: {e}");
                return ExitCode::from(EXIT_RUNTIME);
            }
        }
    }
    for run in &runs {
        if let Some(c) = &run.comparator.certificate {
            if !c.certified {
                eprintln!(
                    "warning: seed {}: comparator not certified ({} random points, worst relative gap {:.3e})",
                    run.seed, c.points, c.worst_gap
                );
            }
        }
    }

    match write_outputs(&cfg, &runs) {
        Ok(()) => {
            for run in &runs {
                println!(
                    "seed {}: terminal regret {:.6}, bound {:.6}",
                    run.seed,
                    run.terminal_regret(),
                    run.terminal_bound()
                );
            }
            println!("outputs written to {}", cfg.output.dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: writing outputs: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn write_outputs(cfg: &config::RunConfig, runs: &[ExperimentRun]) -> std::io::Result<()> {
    let dir = &cfg.output.dir;
    fs::create_dir_all(dir)?;
    for run in runs {
        output::write_records(&dir.join(format!("seed_{}.csv", run.seed)), &run.records)?;
    }
    output::write_summary(&dir.join("summary.csv"), runs)?;
    if cfg.output.svg {
        fs::write(dir.join("regret.svg"), output::regret_svg(runs))?;
    }
    let meta = format!(
        "soco_version = \"{}\"\nrng = \"{}\"\nhorizon = {}\nseeds = {:?}\n",
        env!("CARGO_PKG_VERSION"),
        cfg.experiment.rng.name(),
        cfg.experiment.horizon,
        cfg.experiment.seeds
    );
    fs::write(dir.join("metadata.toml"), meta)
}

fn verify(suite: &str) -> ExitCode {
    if !SUITES.contains(&suite) {
        eprintln!("error: unknown suite '{suite}'");
        eprintln!("usage: soco verify <{}>", SUITES.join("|"));
        return ExitCode::from(EXIT_VALIDATION);
    }
    match run_suite(suite) {
        Ok(report) => {
            for c in &report.checks {
                println!("[{}] {}: {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail);
            }
            let failed = report.checks.iter().filter(|c| !c.passed).count();
            println!("{suite}: {} of {} checks passed", report.checks.len() - failed, report.checks.len());
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_VERIFY)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { EXIT_RUNTIME } else { EXIT_VERIFY })
        }
    }
}
