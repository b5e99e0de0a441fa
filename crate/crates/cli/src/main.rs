mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use trafficlab::sensors::SensorMode;

#[derive(Parser)]
#[command(name = "trafficlab", version, about = "Simulate a signalized grid, build multi-source speed datasets, train and evaluate forecasters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate sessions and write trajectory CSVs.
    Simulate(Common),
    /// Turn simulated sessions into a windowed dataset.
    Dataset(Common),
    /// Train a forecaster on the dataset.
    Train(Common),
    /// Evaluate a trained checkpoint on the test split.
    Eval(EvalArgs),
    /// Score the constant baselines on the test split.
    Baseline(Common),
    /// MFD, travel-time, grouped-error and coverage-sweep tables.
    Report(ReportArgs),
}

/// Flags shared by every subcommand; each overrides the matching config field.
#[derive(Args, Clone, Debug)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub sessions: Option<usize>,
    /// Number of training sessions.
    #[arg(long)]
    pub train_sessions: Option<usize>,
    /// Sensor mode: full, pn or pn_ld_minus.
    #[arg(long)]
    pub mode: Option<SensorMode>,
    #[arg(long)]
    pub coverage: Option<f64>,
    #[arg(long)]
    pub noise_ld: Option<f64>,
    #[arg(long)]
    pub noise_drone: Option<f64>,
    /// drone, ld or both.
    #[arg(long)]
    pub modalities: Option<String>,
    /// Drop the graph message-exchange stage.
    #[arg(long)]
    pub no_gnn: bool,
    #[arg(long)]
    pub hops: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Run directory.
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Checkpoint to evaluate instead of the one trained for these flags.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated coverages for a retraining sweep, e.g. 0.01,0.2,1.
    #[arg(long, value_delimiter = ',')]
    sweep: Vec<f64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(c) => commands::simulate(&c),
        Command::Dataset(c) => commands::dataset(&c),
        Command::Train(c) => commands::train(&c),
        Command::Eval(a) => commands::eval(&a.common, a.checkpoint.as_deref()),
        Command::Baseline(c) => commands::baseline(&c),
        Command::Report(a) => commands::report(&a.common, &a.sweep),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.line());
            ExitCode::from(f.code())
        }
    }
}
