mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use adaptctl_core::pipeline::{GridSpec, ManagerTarget};
use clap::{Args, Parser, Subcommand};

/// Simulate, tune, and evaluate a self-adaptive body sensor network.
#[derive(Debug, Parser)]
#[command(name = "adaptctl", version)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the closed loop and write response, commands, and report files.
    Run(RunArgs),
    /// Collect a tuning dataset.
    #[command(subcommand)]
    Collect(CollectCommand),
    /// Fit models to a dataset and optimize them into a tuned configuration.
    #[command(subcommand)]
    Tune(TuneCommand),
    /// Compute metrics for response files and emit scatter data.
    Report(ReportArgs),
}

/// Inputs shared by the commands that simulate.
#[derive(Debug, Args)]
struct SystemArgs {
    /// Scenario file; the built-in default scenario when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Goals file; built-in goals (setpoint 0.95) when omitted.
    #[arg(long)]
    goals: Option<PathBuf>,
    /// Reliability formula file; the built-in formula when omitted.
    #[arg(long)]
    formula: Option<PathBuf>,
    /// Simulation seed; the scenario's seed when omitted.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    system: SystemArgs,
    #[arg(long)]
    ticks: Option<u64>,
    /// Tuned-config file supplying gains and search parameters.
    #[arg(long)]
    tuned: Option<PathBuf>,
    #[arg(long)]
    kp: Option<f64>,
    #[arg(long)]
    ki: Option<f64>,
    #[arg(long)]
    iw: Option<usize>,
    #[arg(long)]
    gran: Option<f64>,
    #[arg(long)]
    offset: Option<f64>,
    /// Output directory.
    #[arg(long, default_value = "run")]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum CollectCommand {
    /// Time the strategy search over a (gran, offset) grid.
    Manager(CollectManagerArgs),
    /// Run the closed loop over a (kp, ki) grid.
    Enactor(CollectEnactorArgs),
}

#[derive(Debug, Args)]
struct CollectManagerArgs {
    #[command(flatten)]
    system: SystemArgs,
    #[arg(long, value_name = "LO:HI:STEP")]
    grid_gran: GridSpec,
    #[arg(long, value_name = "LO:HI:STEP")]
    grid_offset: GridSpec,
    /// Searches per grid cell; the recorded time is their mean.
    #[arg(long, default_value_t = 5)]
    repetitions: usize,
    /// Leave the wall-time column empty so the file is reproducible.
    #[arg(long)]
    steps_only: bool,
    #[arg(long, default_value = "manager_dataset.csv")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CollectEnactorArgs {
    #[command(flatten)]
    system: SystemArgs,
    #[arg(long, value_name = "LO:HI:STEP")]
    grid_kp: GridSpec,
    #[arg(long, value_name = "LO:HI:STEP")]
    grid_ki: GridSpec,
    /// Integral window; the goals' window when omitted.
    #[arg(long)]
    iw: Option<usize>,
    /// Keep a seeded random subset of this many grid points.
    #[arg(long)]
    subset: Option<usize>,
    #[arg(long)]
    gran: Option<f64>,
    #[arg(long)]
    offset: Option<f64>,
    #[arg(long, default_value = "enactor_dataset.csv")]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum TuneCommand {
    /// Tune gran and offset from a manager dataset.
    Manager(TuneManagerArgs),
    /// Tune kp and ki from an enactor dataset.
    Enactor(TuneEnactorArgs),
}

#[derive(Debug, Args)]
struct TuneCommon {
    /// Dataset produced by `collect`.
    dataset: PathBuf,
    #[arg(long)]
    goals: Option<PathBuf>,
    /// Optimizer seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Tuned-config file; updated in place when it already exists.
    #[arg(long, default_value = "tuned.toml")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TuneManagerArgs {
    #[command(flatten)]
    common: TuneCommon,
    /// Column to minimize.
    #[arg(long, default_value = "steps")]
    target: ManagerTarget,
}

#[derive(Debug, Args)]
struct TuneEnactorArgs {
    #[command(flatten)]
    common: TuneCommon,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Response CSVs written by `run`.
    responses: Vec<PathBuf>,
    #[arg(long)]
    goals: Option<PathBuf>,
    /// Overshoot and SSE limit for the threshold flag.
    #[arg(long, default_value_t = 0.03)]
    threshold: f64,
    #[arg(long, default_value = "metrics.csv")]
    out: PathBuf,
    #[arg(long, default_value = "scatter.csv")]
    scatter: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let result = match cli.command {
        Command::Run(a) => commands::run(a),
        Command::Collect(CollectCommand::Manager(a)) => commands::collect_manager(a),
        Command::Collect(CollectCommand::Enactor(a)) => commands::collect_enactor(a),
        Command::Tune(TuneCommand::Manager(a)) => commands::tune_manager(a),
        Command::Tune(TuneCommand::Enactor(a)) => commands::tune_enactor(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("adaptctl: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
