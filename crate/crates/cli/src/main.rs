//! `rerand`: design, assign, analyze and simulate rerandomized experiments.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "rerand", version, about = "Rerandomized experiments: design, assignment, analysis and simulation")]
pub struct Cli {
    /// Master seed; falls back to RERAND_SEED, then to the config file.
    #[arg(long, global = true, env = "RERAND_SEED")]
    pub seed: Option<u64>,

    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    /// Write the machine-readable output here instead of standard out
    /// (a directory for `simulate`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Resolve the balance criterion for a covariate file.
    Design(DesignArgs),
    /// Draw an acceptable assignment.
    Assign(AssignArgs),
    /// Estimate the average treatment effect.
    Analyze(AnalyzeArgs),
    /// Confidence interval from the asymptotic law of the design.
    Ci(CiArgs),
    /// Randomization test of the sharp null of no effect.
    Test(TestArgs),
    /// Run the simulation study and write CSV/SVG reports.
    Simulate(SimulateArgs),
}

#[derive(Args, Debug, Clone)]
pub struct CriterionArgs {
    #[arg(long, value_enum)]
    pub metric: Option<MetricArg>,
    /// Target acceptance probability.
    #[arg(long)]
    pub pa: Option<f64>,
    /// Set the threshold from this many complete randomizations instead of
    /// the chi-square quantile.
    #[arg(long)]
    pub threshold_draws: Option<usize>,
    /// Comma-separated design covariates.
    #[arg(long, value_delimiter = ',')]
    pub rr_columns: Option<Vec<String>>,
    /// Comma-separated adjustment covariates.
    #[arg(long, value_delimiter = ',')]
    pub adj_columns: Option<Vec<String>>,
    /// Treated-arm size (default: half the units, rounded down).
    #[arg(long)]
    pub n1: Option<usize>,
    /// CSV matrix for the quadratic-form metric.
    #[arg(long)]
    pub matrix: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum MetricArg {
    Mahalanobis,
    Euclidean,
    QuadraticForm,
}

#[derive(Args, Debug)]
pub struct DesignArgs {
    #[arg(long)]
    pub covariates: PathBuf,
    #[command(flatten)]
    pub criterion: CriterionArgs,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Rejection,
    PairSwitch,
}

#[derive(Args, Debug)]
pub struct AssignArgs {
    #[arg(long)]
    pub covariates: PathBuf,
    #[command(flatten)]
    pub criterion: CriterionArgs,
    /// Where to write the `unit_id,z` CSV.
    #[arg(long)]
    pub assignment_out: PathBuf,
    #[arg(long, value_enum, default_value = "rejection")]
    pub strategy: Strategy,
    /// Attempt budget (default: 1000/pa).
    #[arg(long)]
    pub max_attempts: Option<u64>,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    #[arg(long)]
    pub covariates: PathBuf,
    #[arg(long)]
    pub assignment: PathBuf,
    #[arg(long)]
    pub outcomes: PathBuf,
    /// Outcome column (needed when the outcome file has several).
    #[arg(long)]
    pub outcome_column: Option<String>,
    /// Assignment column (needed when the assignment file has several).
    #[arg(long)]
    pub assignment_column: Option<String>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum ModelArg {
    Ols,
    Forest,
}

#[derive(Args, Debug, Clone)]
pub struct EstimatorArgs {
    /// D (difference in means), L (linear adjustment) or DR (doubly robust).
    #[arg(long)]
    pub method: Option<String>,
    /// Outcome model of the doubly robust estimator.
    #[arg(long, value_enum)]
    pub model: Option<ModelArg>,
    /// Cross-fitting folds.
    #[arg(long)]
    pub folds: Option<usize>,
    /// Select outcome-model covariates by forward stepwise regression.
    #[arg(long)]
    pub stepwise: bool,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    #[command(flatten)]
    pub criterion: CriterionArgs,
    /// Write per-unit influence values of the doubly robust estimator here.
    #[arg(long)]
    pub eif_out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum DesignArg {
    /// Rerandomized with the configured criterion.
    Rr,
    /// Complete randomization.
    Cr,
}

#[derive(Args, Debug)]
pub struct CiArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    #[command(flatten)]
    pub criterion: CriterionArgs,
    #[arg(long, value_enum, default_value = "rr")]
    pub design: DesignArg,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Monte Carlo draws for the mixture quantile.
    #[arg(long)]
    pub mixture_draws: Option<usize>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum TieArg {
    Strict,
    Inclusive,
}

#[derive(Args, Debug)]
pub struct TestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    #[command(flatten)]
    pub criterion: CriterionArgs,
    #[arg(long, value_enum, default_value = "rr")]
    pub design: DesignArg,
    /// Number of null-distribution draws B.
    #[arg(long)]
    pub null_draws: Option<usize>,
    #[arg(long, value_enum)]
    pub tie_rule: Option<TieArg>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum SettingArg {
    Linear,
    Nonlinear,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub setting: Option<SettingArg>,
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub scenarios: Option<Vec<u8>>,
    #[arg(long)]
    pub replications: Option<usize>,
    #[arg(long)]
    pub covariates_dim: Option<usize>,
    #[arg(long)]
    pub pa: Option<f64>,
    #[arg(long)]
    pub mixture_draws: Option<usize>,
    /// Only these figure families (precision, coherence, coverage, power).
    #[arg(long, value_delimiter = ',')]
    pub figure: Option<Vec<String>>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
