//! `nmcs-sim`: scenario generation, target ranking, single runs, sweeps and
//! impact reports for Sybil attacks on a crowdsensed navigation service.

mod commands;
mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "nmcs-sim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Output {
    /// Directory receiving every artifact and the manifest.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Materializes a scenario's network and demand into files.
    Generate {
        /// Scenario config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Overrides every seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's penetration rate.
        #[arg(long)]
        penetration: Option<f64>,
        #[command(flatten)]
        output: Output,
    },
    /// Ranks candidate attack targets by edge betweenness.
    Targets {
        #[command(flatten)]
        source: commands::NetworkArgs,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 3.0)]
        max_detour: f64,
        #[arg(long, default_value_t = 64)]
        od_sample: usize,
        #[command(flatten)]
        output: Output,
    },
    /// Runs one simulation, with the config's attack unless told otherwise.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Attack spec replacing the config's own.
        #[arg(long, conflicts_with = "baseline")]
        attack: Option<PathBuf>,
        /// Ignore any attack and run the baseline.
        #[arg(long)]
        baseline: bool,
        #[command(flatten)]
        output: Output,
    },
    /// Runs paired baseline/attack simulations over a grid of attack settings.
    Sweep {
        /// Sweep config (JSON).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        output: Output,
    },
    /// Compares two saved runs.
    Report {
        #[command(flatten)]
        source: commands::NetworkArgs,
        /// Directory of the baseline run.
        #[arg(long)]
        baseline: PathBuf,
        /// Directory of the attack run.
        #[arg(long)]
        attack: PathBuf,
        /// Attack spec; defaults to the one recorded in the attack run.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[command(flatten)]
        output: Output,
    },
}

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();

    match Cli::parse().command {
        Command::Generate {
            config,
            seed,
            penetration,
            output,
        } => commands::generate(&config, seed, penetration, &output.out),
        Command::Targets {
            source,
            k,
            max_detour,
            od_sample,
            output,
        } => commands::targets(&source, k, max_detour, od_sample, &output.out),
        Command::Run {
            config,
            seed,
            attack,
            baseline,
            output,
        } => commands::run(&config, seed, attack.as_deref(), baseline, &output.out),
        Command::Sweep {
            config,
            seed,
            output,
        } => commands::sweep(&config, seed, &output.out),
        Command::Report {
            source,
            baseline,
            attack,
            spec,
            output,
        } => commands::report(&source, &baseline, &attack, spec.as_deref(), &output.out),
    }
}
