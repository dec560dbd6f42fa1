use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spectral_clt::harness::{parse_config_for, run_experiment, Experiment};
use spectral_clt::par::with_threads;

#[derive(Parser)]
#[command(name = "spectral-clt", version, about = "Fluctuation experiments for interacting eigenvalue systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate trajectories and write them as CSV.
    Simulate(Common),
    /// Integrate the limit moment hierarchy.
    Moments(Common),
    /// Fluctuation covariance and Gaussianity checks.
    Clt(Common),
    /// Ordering of coupled systems.
    Compare(Common),
    /// Moment drift of the time-rescaled systems.
    Stationarity(Common),
    /// Self-similarity and OU/Dyson time change.
    Identity(Common),
    /// Particle system against the matrix process.
    OracleMatch(Common),
}

#[derive(Args)]
struct Common {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (experiment, common) = match cli.command {
        Command::Simulate(c) => (Experiment::Simulate, c),
        Command::Moments(c) => (Experiment::Moments, c),
        Command::Clt(c) => (Experiment::Clt, c),
        Command::Compare(c) => (Experiment::Compare, c),
        Command::Stationarity(c) => (Experiment::Stationarity, c),
        Command::Identity(c) => (Experiment::Identity, c),
        Command::OracleMatch(c) => (Experiment::OracleMatch, c),
    };
    match run(experiment, &common) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(experiment: Experiment, common: &Common) -> spectral_clt::Result<bool> {
    let text = fs::read_to_string(&common.config)?;
    let config = parse_config_for(&text, Some(experiment))?;
    // The override stays out of the config so reports do not depend on it.
    let dir = common.out.clone().unwrap_or_else(|| config.output_dir());
    let artifacts = with_threads(common.threads, || run_experiment(&config))??;
    artifacts.write(&dir)?;
    let report = &artifacts.report;
    for c in &report.checks {
        let status = if c.report.pass { "pass" } else { "FAIL" };
        let kind = if c.mandatory { "" } else { " (advisory)" };
        println!("{status} {}{kind}: statistic {:.4}, p {:.4}", c.report.name, c.report.statistic, c.report.p_value);
    }
    println!("{} -> {}", if report.pass { "PASS" } else { "FAIL" }, dir.join("report.json").display());
    Ok(report.pass)
}
