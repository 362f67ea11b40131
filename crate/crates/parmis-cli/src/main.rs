//! `parmis` command line: configure, run, and report policy-search
//! experiments on the simulated platform.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use parmis::Error;

#[derive(Parser)]
#[command(
    name = "parmis",
    about = "Multi-objective DRM policy search on a simulated big.LITTLE SoC",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config, one job per seed.
    Run {
        /// Path to the experiment config.
        #[arg(long)]
        config: PathBuf,
        /// Run only this seed (overrides the config's seed list).
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (overrides the config's out_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare finished run directories: shared reference point, per-method
    /// PHV, and PHV normalized to the parmis entry.
    Compare {
        /// One run directory per method.
        dirs: Vec<PathBuf>,
        /// "auto" (from the union of evaluations) or comma-separated values.
        #[arg(long, default_value = "auto")]
        reference: String,
        /// Also write the CSV table here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Compare even when total evaluation counts differ.
        #[arg(long)]
        allow_uneven_budget: bool,
    },
    /// Pick one policy from a front file by a preference.
    Select {
        /// Path to a front.csv produced by `run`.
        #[arg(long)]
        front: PathBuf,
        /// Comma-separated simplex weights, e.g. "0.7,0.3".
        #[arg(long)]
        weights: Option<String>,
        /// Comma-separated objective priority, e.g. "energy,time".
        #[arg(long)]
        lexicographic: Option<String>,
        /// Copy the selected policy file here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a stored policy file (or a governor by name) on apps.
    Eval {
        /// Policy file path, or one of: performance, powersave, ondemand,
        /// interactive.
        #[arg(long)]
        policy: String,
        /// Built-in workload names or workload TOML paths.
        #[arg(long, value_delimiter = ',')]
        apps: Vec<String>,
        /// Experiment config supplying simulator calibration overrides.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Print one JSON record per epoch.
        #[arg(long)]
        trace: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config, seed, out } => commands::cmd_run(&config, seed, out),
        Command::Compare { dirs, reference, out, allow_uneven_budget } => {
            commands::cmd_compare(&dirs, &reference, out, allow_uneven_budget)
        }
        Command::Select { front, weights, lexicographic, out } => {
            commands::cmd_select(&front, weights, lexicographic, out)
        }
        Command::Eval { policy, apps, config, trace } => {
            commands::cmd_eval(&policy, &apps, config, trace)
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Input(_) | Error::Serde(_) => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}
