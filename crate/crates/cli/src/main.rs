use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod io;

#[derive(Parser, Debug)]
#[command(name = "probe", version, about = "Sparse linear regression by partitioned empirical Bayes ECM")]
struct Cli {
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true, env = "PROBE_THREADS")]
    threads: Option<usize>,
    /// Seed for every random choice (update order, CV folds, simulation).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a model to a CSV with a response column.
    Fit(FitArgs),
    /// Predict from a saved fit.
    Predict(PredictArgs),
    /// Generate a simulated dataset.
    Simulate(SimArgs),
    /// Run the simulation benchmark grid.
    Bench(BenchArgs),
    /// K-fold cross-validated prediction error of one method.
    Cv(CvArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum VariantArg {
    #[value(alias = "all-at-once")]
    Aao,
    #[value(alias = "one-at-a-time")]
    Oaat,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum OrderArg {
    Lasso,
    Random,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum PredictorArg {
    Continuous,
    Binary,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_enum, default_value_t = VariantArg::Aao)]
    variant: VariantArg,
    #[arg(long, default_value = "y")]
    response: String,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Convergence quantile; defaults to 1e-3 (aao) or 0.1 (oaat).
    #[arg(long)]
    epsilon: Option<f64>,
    /// Learning-rate exponent; defaults to 1 (aao) or 0.5 (oaat).
    #[arg(long)]
    lr_exponent: Option<f64>,
    #[arg(long)]
    storey_lambda: Option<f64>,
    #[arg(long)]
    bandwidth_multiplier: Option<f64>,
    /// One-at-a-time update order.
    #[arg(long, value_enum)]
    order: Option<OrderArg>,
    /// All-at-once start: constant β = b with p = 1 instead of zero.
    #[arg(long)]
    init_b: Option<f64>,
    /// Folds for the lasso that seeds the one-at-a-time order.
    #[arg(long)]
    folds: Option<usize>,
    /// Convergence trace CSV; defaults to `<output>.trace.csv`.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    /// JSON written by `fit`.
    #[arg(long)]
    fit: PathBuf,
    /// Predictor CSV; a response column, if present, is ignored.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value = "y")]
    response: String,
}

#[derive(Args, Debug)]
pub struct SimArgs {
    /// Directory for data.csv and truth.csv.
    #[arg(long)]
    output_dir: PathBuf,
    /// Number of predictors, a perfect square.
    #[arg(long, default_value_t = 400)]
    m: usize,
    /// Number of active predictors.
    #[arg(long, default_value_t = 20)]
    m1: usize,
    #[arg(long, default_value_t = 0.8)]
    eta: f64,
    #[arg(long, default_value_t = 2.0)]
    snr: f64,
    #[arg(long, value_enum, default_value_t = PredictorArg::Continuous)]
    predictors: PredictorArg,
    #[arg(long, default_value_t = 400)]
    n: usize,
    #[arg(long, default_value_t = 20.0)]
    s0_gamma: f64,
    #[arg(long, default_value_t = 10.0)]
    s0_x: f64,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    output_dir: PathBuf,
    #[arg(long, default_value = "bench")]
    stem: String,
    /// Grid values; settings are all combinations.
    #[arg(long, value_delimiter = ',', default_value = "400")]
    m: Vec<usize>,
    /// Active fraction M₁/M.
    #[arg(long, value_delimiter = ',', default_value = "0.05")]
    pi: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.8")]
    eta: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "2")]
    snr: Vec<f64>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "continuous")]
    predictors: Vec<PredictorArg>,
    #[arg(long, default_value_t = 400)]
    n: usize,
    #[arg(long, value_delimiter = ',', default_value = "probe_aao,probe_oaat,lasso,alasso,ridge")]
    methods: Vec<String>,
    #[arg(long, default_value_t = 50)]
    replicates: usize,
}

#[derive(Args, Debug)]
pub struct CvArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    /// probe_aao, probe_oaat, lasso, alasso or ridge.
    #[arg(long, default_value = "probe_aao")]
    method: String,
    #[arg(long, default_value = "y")]
    response: String,
}

/// Outcome of a command that ran to completion.
pub enum Status {
    Done,
    NotConverged,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let seed = cli.seed;
    let result = match cli.command {
        Command::Fit(a) => commands::fit(&a, seed),
        Command::Predict(a) => commands::predict(&a),
        Command::Simulate(a) => commands::simulate(&a, seed),
        Command::Bench(a) => commands::bench(&a, seed),
        Command::Cv(a) => commands::cv(&a, seed),
    };
    match result {
        Ok(Status::Done) => ExitCode::SUCCESS,
        Ok(Status::NotConverged) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
