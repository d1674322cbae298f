//! `curvjm`: simulate datasets, fit joint models, compute survival LOO and
//! aggregate replicate studies.

mod fit;
mod loo;
mod report;
mod run;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::run::Failure;

/// Environment variable supplying the default worker count.
pub const JOBS_ENV: &str = "CURVJM_JOBS";

#[derive(Parser, Debug)]
#[command(name = "curvjm", version, about = "Curvature-based joint models for longitudinal and survival data")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate simulated datasets from a scenario file.
    Simulate(SimulateArgs),
    /// Fit a joint model to one dataset, or to every dataset below a directory.
    Fit(FitArgs),
    /// Survival PSIS-LOO for one fit, or for every fit below a directory.
    Loo(LooArgs),
    /// Aggregate fits of a replicate study into bias/coverage and LOOIC tables.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Scenario TOML (case, wiv, n, seed, optional overrides and fixture).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of replicates; more than one writes `rep-NNNN` subdirectories
    /// with seeds derived from the base seed.
    #[arg(long, default_value_t = 1)]
    pub replicates: u64,
    /// Worker threads.
    #[arg(long, env = JOBS_ENV, default_value_t = 1)]
    pub jobs: usize,
    /// Override the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Fit TOML; every field is optional and defaults are echoed into the manifest.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory holding longitudinal.csv and survival.csv, or a
    /// directory of such datasets.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory; batch fits go to one subdirectory per dataset.
    #[arg(long)]
    pub out: PathBuf,
    /// Override the sampler seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long, env = JOBS_ENV, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Args, Debug)]
pub struct LooArgs {
    /// Fit directory, or a directory containing fit directories.
    #[arg(long)]
    pub fit: PathBuf,
    /// Worker threads.
    #[arg(long, env = JOBS_ENV, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Directory searched recursively for fit directories.
    #[arg(long)]
    pub study: PathBuf,
    /// Output directory for the tables.
    #[arg(long)]
    pub out: PathBuf,
    /// Replicates expected per approach; fewer triggers a warning.
    #[arg(long)]
    pub expected_replicates: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let res = match cli.command {
        Command::Simulate(a) => simulate::run(&a),
        Command::Fit(a) => fit::run(&a),
        Command::Loo(a) => loo::run(&a),
        Command::Report(a) => report::run(&a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, message }) => {
            eprintln!("curvjm: {message}");
            ExitCode::from(code)
        }
    }
}
