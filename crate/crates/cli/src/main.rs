//! `scpanel` command-line front end.
//!
//! Exit status: 0 on success, 1 for invalid input or usage, 2 when an
//! estimator fails numerically.

mod commands;
mod config;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] scpanel::Error),
    #[error("{0}")]
    Usage(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_numerical() => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "scpanel", version, about = "Synthetic control and difference-in-differences on daily panels")]
pub struct Cli {
    /// TOML configuration file; command-line flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for results, plot data and the run manifest.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Maximum number of worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a match export and write a normalized copy.
    Ingest(IngestArgs),
    /// Build a character-by-day panel from match records.
    Panel(PanelArgs),
    /// Classify players by their change in use of a focal character.
    Classify(ClassifyArgs),
    /// Synthetic-control estimation and robustness checks.
    Sc {
        #[command(subcommand)]
        command: ScCommand,
    },
    /// Difference-in-differences on a player panel.
    Did {
        #[command(subcommand)]
        command: DidCommand,
    },
    /// Split a treated unit's effect using a composite of LGB units.
    Decompose(DecomposeArgs),
    /// Generate a seeded synthetic panel with known effects.
    Simulate(SimulateArgs),
}

#[derive(Debug, Subcommand)]
pub enum ScCommand {
    /// Fit weights, effects and the placebo confidence interval.
    Fit(ScArgs),
    /// Placebo-in-space RMSE ratio ranking.
    Placebo(PlaceboArgs),
    /// Refit with the event moved earlier.
    Backdate(BackdateArgs),
    /// Refit without each donor that carries weight.
    Loo(ScArgs),
}

#[derive(Debug, Subcommand)]
pub enum DidCommand {
    /// ATT by day with bootstrap bands.
    Att(DidArgs),
}

#[derive(Debug, Args)]
pub struct WindowArgs {
    /// Match export (CSV).
    #[arg(long)]
    pub matches: PathBuf,
    /// First day kept (inclusive).
    #[arg(long)]
    pub start: NaiveDate,
    /// Last day kept (inclusive).
    #[arg(long)]
    pub end: NaiveDate,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub window: WindowArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MetricArg {
    PickRate,
    WinRate,
}

#[derive(Debug, Args)]
pub struct PanelArgs {
    #[command(flatten)]
    pub window: WindowArgs,
    /// First post-treatment day.
    #[arg(long)]
    pub event: NaiveDate,
    /// Treated unit (character).
    #[arg(long)]
    pub treated: Option<String>,
    #[arg(long, value_enum)]
    pub metric: Option<MetricArg>,
    /// Comma-separated regions to keep (default: all).
    #[arg(long, value_delimiter = ',')]
    pub regions: Option<Vec<String>>,
    /// Units hit by the secondary treatment; kept out of donor pools.
    #[arg(long, value_delimiter = ',')]
    pub lgb: Option<Vec<String>>,
    /// Units kept in the panel but out of donor pools.
    #[arg(long, value_delimiter = ',')]
    pub exclude: Option<Vec<String>>,
    /// Units removed from the panel entirely.
    #[arg(long, value_delimiter = ',')]
    pub drop: Option<Vec<String>>,
    /// Carry the last observed win rate over days without appearances.
    #[arg(long)]
    pub carry_forward: bool,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[command(flatten)]
    pub window: WindowArgs,
    #[arg(long)]
    pub event: NaiveDate,
    /// Character whose use is tracked.
    #[arg(long)]
    pub focal: String,
    /// Minimum pre-period pick rate (percent) of a prior user.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub min_matches: Option<u32>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KernelArg {
    Gaussian,
    Epanechnikov,
}

#[derive(Debug, Args)]
pub struct ScArgs {
    /// Panel CSV with its JSON sidecar.
    #[arg(long)]
    pub panel: PathBuf,
    /// `zero`, `rule`, or a non-negative number.
    #[arg(long)]
    pub zeta: Option<String>,
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[arg(long, value_enum)]
    pub kernel: Option<KernelArg>,
    /// Smooth across the event date instead of splitting at it.
    #[arg(long)]
    pub whole_series: bool,
    #[arg(long)]
    pub no_smooth: bool,
}

#[derive(Debug, Args)]
pub struct PlaceboArgs {
    #[command(flatten)]
    pub sc: ScArgs,
    /// Pre-period RMSE below which placebo units are left out of the ranking.
    #[arg(long)]
    pub min_pre_rmse: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BackdateArgs {
    #[command(flatten)]
    pub sc: ScArgs,
    #[arg(long)]
    pub shift: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EstimatorArg {
    #[value(alias = "unconditional")]
    Unc,
    #[value(alias = "doubly-robust")]
    Dr,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LawArg {
    Mammen,
    Rademacher,
}

#[derive(Debug, Args)]
pub struct DidArgs {
    /// Player panel CSV with its JSON sidecar.
    #[arg(long)]
    pub panel: PathBuf,
    /// Treatment group compared with controls: moderate or substantial.
    #[arg(long)]
    pub design: Option<String>,
    #[arg(long, value_enum)]
    pub estimator: Option<EstimatorArg>,
    #[arg(long)]
    pub draws: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub law: Option<LawArg>,
    #[arg(long)]
    pub level: Option<f64>,
    /// Number of pre-period placebo days.
    #[arg(long)]
    pub pre_window: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[command(flatten)]
    pub sc: ScArgs,
    /// Comma-separated LGB units averaged into the composite.
    #[arg(long, value_delimiter = ',', required = true)]
    pub members: Vec<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SimKindArg {
    Units,
    Players,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub kind: Option<SimKindArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, allow_hyphen_values = true)]
    pub delta: Option<f64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
