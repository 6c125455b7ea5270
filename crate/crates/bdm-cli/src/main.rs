//! Command-line front end: `run` executes a Monte-Carlo campaign, `pcrb`
//! computes bound series, `plot` emits a gnuplot script over existing
//! outputs. Flags override config-file values, which override benchmark
//! defaults.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bdm_cli::campaign::{run_campaign, write_campaign_csvs, write_pcrb_csvs};
use bdm_cli::config::{CaseKind, ExperimentConfig, FilterKind};
use bdm_cli::error::Result;
use bdm_cli::plots::emit_plots;

#[derive(Parser)]
#[command(
    name = "bdm-cli",
    about = "Monte-Carlo benchmark harness for bias detecting and mitigating filtering"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a filtering campaign and write RMSE/timing CSVs.
    Run(RunArgs),
    /// Compute posterior Cramer-Rao bound series and write CSVs.
    Pcrb(PcrbArgs),
    /// Emit a gnuplot script over the CSVs in an output directory.
    Plot(PlotArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON config file; missing fields take benchmark defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Bias scenario.
    #[arg(long, value_enum)]
    case: Option<CaseKind>,
    /// Bias probabilities to sweep (comma-separated).
    #[arg(long, value_delimiter = ',')]
    lambda: Vec<f64>,
    /// Steps per run.
    #[arg(long)]
    steps: Option<usize>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Monte-Carlo runs per lambda.
    #[arg(long)]
    runs: Option<usize>,
    /// Filters to run (comma-separated).
    #[arg(long, value_enum, value_delimiter = ',')]
    filters: Vec<FilterKind>,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Args)]
struct PcrbArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Monte-Carlo samples per estimator.
    #[arg(long, default_value_t = 100)]
    samples: usize,
}

#[derive(Args)]
struct PlotArgs {
    /// Directory holding campaign CSVs.
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

fn load_config(common: &CommonArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(case) = common.case {
        cfg.case = case;
    }
    if !common.lambda.is_empty() {
        cfg.lambda = common.lambda.clone();
    }
    if let Some(steps) = common.steps {
        cfg.steps = steps;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let mut cfg = load_config(&args.common)?;
    if let Some(runs) = args.runs {
        cfg.runs = runs;
    }
    if !args.filters.is_empty() {
        cfg.filters = args.filters.clone();
    }
    cfg.validate()?;

    let output = run_campaign(&cfg, args.workers)?;
    let files = write_campaign_csvs(&args.common.out, &cfg, &output)?;
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn cmd_pcrb(args: &PcrbArgs) -> Result<()> {
    let cfg = load_config(&args.common)?;
    let files = write_pcrb_csvs(&args.common.out, &cfg, args.samples)?;
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn cmd_plot(args: &PlotArgs) -> Result<()> {
    let path = emit_plots(&args.out)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Pcrb(args) => cmd_pcrb(args),
        Command::Plot(args) => cmd_plot(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
