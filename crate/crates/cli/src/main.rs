mod commands;
mod pipeline;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hpc_sentinel_core::ml::BalanceMethod;

/// Firmware-modification detection from instruction-class counters, and the
/// islanded-microgrid attack scenarios that motivate it.
#[derive(Parser, Debug)]
#[command(name = "hpc-sentinel", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Window instruction listings into an HPC dataset CSV.
    Extract(ExtractArgs),
    /// Splice an attack payload into a base listing.
    Mutate(MutateArgs),
    /// Train a classifier on a dataset split.
    Train(TrainArgs),
    /// Evaluate a trained model on the held-out split it recorded.
    Eval(EvalArgs),
    /// Rank features by principal-component loadings.
    Rank(RankArgs),
    /// Train every model on datasets with instruction classes removed.
    Ablate(AblateArgs),
    /// Run a microgrid scenario.
    Simulate(SimulateArgs),
    /// Draw an SVG line chart from a CSV.
    Report(ReportArgs),
    /// Run the whole pipeline into one output directory.
    Reproduce(ReproduceArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum LabelArg {
    Benign,
    Malicious,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Strict,
    Lenient,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum BalanceArg {
    Oversample,
    Undersample,
}

impl From<BalanceArg> for BalanceMethod {
    fn from(b: BalanceArg) -> Self {
        match b {
            BalanceArg::Oversample => BalanceMethod::Oversample,
            BalanceArg::Undersample => BalanceMethod::Undersample,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum VariantArg {
    Literal,
    Symmetric,
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    /// Category map JSON; the built-in C28x map when omitted.
    #[arg(long)]
    pub map: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub window: usize,
    #[arg(long, value_enum)]
    pub label: LabelArg,
    /// Attack kind, required for malicious files.
    #[arg(long)]
    pub attack: Option<String>,
    #[arg(long, value_enum, default_value = "lenient")]
    pub mode: ModeArg,
    /// Drop the trailing partial window of each file.
    #[arg(long)]
    pub full_windows_only: bool,
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct MutateArgs {
    #[arg(long)]
    pub base: PathBuf,
    /// Attack kind; selects the built-in template unless `--template` is given.
    #[arg(long)]
    pub attack: Option<String>,
    #[arg(long)]
    pub template: Option<PathBuf>,
    #[arg(long)]
    pub map: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct ModelFlags {
    /// Trees in the random forest.
    #[arg(long, default_value_t = 100)]
    pub trees: usize,
    /// Full-batch gradient steps for the network.
    #[arg(long, default_value_t = 2000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 16)]
    pub hidden: usize,
    /// Depth limit for trees.
    #[arg(long)]
    pub max_depth: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0.7)]
    pub split: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Balance the training split by oversampling the minority class.
    #[arg(long)]
    pub balance: bool,
    #[arg(long, value_enum)]
    pub balance_method: Option<BalanceArg>,
    /// Plain (unstratified) split.
    #[arg(long)]
    pub no_stratify: bool,
    /// Comma-separated feature names to train on; all when omitted.
    #[arg(long, value_delimiter = ',')]
    pub features: Vec<String>,
    #[command(flatten)]
    pub model_flags: ModelFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Score every row instead of the recorded held-out split.
    #[arg(long)]
    pub all_rows: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RankArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub components: usize,
    /// Rank on the correlation matrix instead of the covariance.
    #[arg(long)]
    pub standardize: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// `1`, `2` or `all`.
    #[arg(long, default_value = "all")]
    pub exclusions: String,
    #[arg(long, default_value_t = 0.7)]
    pub split: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub balance: bool,
    #[command(flatten)]
    pub model_flags: ModelFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// One of the shipped scenarios.
    #[arg(long, conflicts_with = "scenario_file")]
    pub scenario: Option<String>,
    #[arg(long)]
    pub scenario_file: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub pno_variant: Option<VariantArg>,
    /// Write the resolved scenario JSON next to the output.
    #[arg(long)]
    pub dump_scenario: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// CSV whose first column is the x axis.
    #[arg(long)]
    pub input: PathBuf,
    /// Columns to plot; every numeric column when omitted.
    #[arg(long, value_delimiter = ',')]
    pub columns: Vec<String>,
    #[arg(long)]
    pub title: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReproduceArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Base listing; the shipped synthetic firmware when omitted.
    #[arg(long)]
    pub base: Option<PathBuf>,
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Directory of template JSON files, one per attack kind.
    #[arg(long)]
    pub templates: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub window: usize,
    #[arg(long, default_value_t = 0.7)]
    pub split: f64,
    #[arg(long, value_enum)]
    pub pno_variant: Option<VariantArg>,
    #[command(flatten)]
    pub model_flags: ModelFlags,
    /// Replace an existing, non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

/// Failure classes mapped onto the process exit status.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<hpc_sentinel_core::Error> for CliError {
    fn from(e: hpc_sentinel_core::Error) -> Self {
        if e.is_numeric() {
            CliError::Numeric(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Some(raw) = std::env::var_os("HPC_SENTINEL_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .to_str()
        .and_then(|s| s.trim().parse().ok())
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("HPC_SENTINEL_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot size the thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| commands::run(cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
