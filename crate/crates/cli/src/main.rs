//! `spatial-lfdr`: simulate sensor fields, fit lfdr's, decide, interpolate and report.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use spatial_lfdr::decide::BfdrRule;
use spatial_lfdr::harness::Method;

mod commands;
mod error;
mod files;
mod rundir;

use error::CliResult;

#[derive(Parser)]
#[command(name = "spatial-lfdr", version, about)]
struct Cli {
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate fields, sensor layouts and p-values into run directories.
    Simulate(SimulateArgs),
    /// Fit the p-value density and write per-sensor lfdr's.
    Fit(FitArgs),
    /// Select discoveries from lfdr's (BFDR) or p-values (BH).
    Decide(DecideArgs),
    /// Extend sensor lfdr's to every grid point.
    Interpolate(InterpolateArgs),
    /// Run every method on simulated runs and aggregate FDR and power.
    Report(ReportArgs),
    /// Quick end-to-end checks of the installation.
    Selftest,
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Field scenario: A, B, C, or custom (taken from --config-file).
    #[arg(long)]
    pub scenario: Option<String>,
    /// Sensor network: 1 (every grid point), 2 (300 sensors), 3 (heterogeneous), or custom.
    #[arg(long)]
    pub config: Option<String>,
    /// JSON run configuration; flags given on the command line take precedence.
    #[arg(long)]
    pub config_file: Option<PathBuf>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub n_runs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitMethod {
    Smom,
    Bum,
    Oracle,
}

#[derive(Args)]
pub struct FitArgs {
    /// CSV with a `p` column; `sensor_index`, `x`, `y` and `T` are used when present.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "smom")]
    pub method: FitMethod,
    /// truth.json of the run; required by the oracle.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// JSON search settings for the sMoM fit.
    #[arg(long)]
    pub fit_config: Option<PathBuf>,
    /// Fit seed; derived from the input's seed and run when omitted.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DecideMethod {
    /// BFDR selection on the `lfdr` column.
    Bfdr,
    /// Benjamini–Hochberg on the `p` column.
    Bh,
}

#[derive(Args)]
pub struct DecideArgs {
    /// lfdr.csv, field.csv or pvalues.csv.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.1", value_parser = parse_alpha)]
    pub alpha: Vec<f64>,
    #[arg(long, value_enum, default_value = "bfdr")]
    pub method: DecideMethod,
    #[arg(long, default_value = "mean", value_parser = parse_rule)]
    pub rule: BfdrRule,
    /// truth.json to score the decisions against.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct InterpolateArgs {
    /// lfdr.csv with `sensor_index` and `lfdr` columns.
    #[arg(long)]
    pub input: PathBuf,
    /// layout.json of the run.
    #[arg(long)]
    pub layout: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Run directories, or directories holding `run-*` subdirectories.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.05,0.1,0.2", value_parser = parse_alpha)]
    pub alpha: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "smom,bum,bh,oracle", value_parser = parse_method)]
    pub method: Vec<Method>,
    #[arg(long, default_value = "mean", value_parser = parse_rule)]
    pub rule: BfdrRule,
    /// JSON search settings for the sMoM fit.
    #[arg(long)]
    pub fit_config: Option<PathBuf>,
    /// Aggregate runs even when their config hashes differ.
    #[arg(long)]
    pub force: bool,
    /// Skip the per-run decision rasters.
    #[arg(long)]
    pub no_rasters: bool,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_alpha(s: &str) -> Result<f64, String> {
    let a: f64 = s
        .trim()
        .parse()
        .map_err(|_| format!("{s:?} is not a number"))?;
    if a > 0.0 && a < 1.0 {
        Ok(a)
    } else {
        Err(format!("alpha must lie in (0, 1), got {a}"))
    }
}

fn parse_rule(s: &str) -> Result<BfdrRule, String> {
    BfdrRule::parse(s).ok_or_else(|| format!("unknown rule {s:?}; expected mean or sum"))
}

fn parse_method(s: &str) -> Result<Method, String> {
    Method::parse(s.trim())
        .ok_or_else(|| format!("unknown method {s:?}; expected smom, bum, bh or oracle"))
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Fit(a) => commands::fit(&a),
        Command::Decide(a) => commands::decide(&a),
        Command::Interpolate(a) => commands::interpolate(&a),
        Command::Report(a) => commands::report(&a),
        Command::Selftest => commands::selftest(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.jobs > 0 {
        // only fails if a global pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
