//! `thermopt`: run simulations, compare policies and generate synthetic
//! Bitbrains-format workloads.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thermopt_core::Criterion;

#[derive(Debug, Parser)]
#[command(
    name = "thermopt",
    version,
    about = "Data-centre energy and thermal simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Override `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress the summary printout.
    #[arg(long)]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one policy; writes intervals.csv and summary.json.
    Run {
        #[command(flatten)]
        common: Common,
        /// Override `policy.criterion`.
        #[arg(long, value_parser = parse_criterion)]
        policy: Option<Criterion>,
    },
    /// Simulate every configured policy on the same workload and report
    /// deltas against the first.
    Compare {
        #[command(flatten)]
        common: Common,
    },
    /// Write one synthetic trace file per VM.
    GenWorkload(GenArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Directory for the trace files.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 180)]
    pub n_vms: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 86_400)]
    pub duration_s: u64,
    #[arg(long, default_value_t = 300)]
    pub interval_s: u64,
    /// Relative weights of the small, medium and large flavors.
    #[arg(long, value_delimiter = ',', default_value = "3,2,1")]
    pub flavor_mix: Vec<u32>,
    #[arg(long, default_value_t = 8.0)]
    pub peak_to_mean: f64,
    /// Seconds added to every timestamp in the files.
    #[arg(long, default_value_t = 1_376_314_846)]
    pub epoch_s: u64,
}

fn parse_criterion(s: &str) -> Result<Criterion, String> {
    s.parse().map_err(|_| {
        let names: Vec<&str> = Criterion::ALL.iter().map(|c| c.name()).collect();
        format!("expected one of {}", names.join(", "))
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { common, policy } => commands::run(&common, policy),
        Command::Compare { common } => commands::compare(&common),
        Command::GenWorkload(args) => commands::gen_workload(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
