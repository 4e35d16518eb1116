//! `vineqr`: simulate data, fit and apply vine quantile regressions, and
//! score predictions.

mod commands;
mod error;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use vineqr::regression::{MarginSpec, ModelId};
use vineqr::select::Strategy;
use vineqr::simgen::SettingId;
use vineqr::vine::VineKind;

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "vineqr", version, about = "Vine copula quantile regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a data set from one of the simulation settings a-h.
    Simulate(SimulateArgs),
    /// Select and fit a vine quantile regression; writes a JSON model and the selection trace.
    Fit(FitArgs),
    /// Predict conditional quantiles with a saved model.
    Predict(PredictArgs),
    /// Score quantile predictions with check loss and interval score.
    Evaluate(EvaluateArgs),
    /// Replicated out-of-sample comparison of the vine competitors.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, value_parser = parse_setting)]
    setting: SettingId,
    /// Noise scale of settings a, g and h.
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    /// Training rows.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Training CSV; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the evaluation rows here.
    #[arg(long)]
    eval_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VineArg {
    C,
    D,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StrategyArg {
    One,
    Two,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MarginArg {
    Kde,
    Uniform,
}

#[derive(Debug, Args)]
struct ReductionArgs {
    /// Fraction of future candidates kept by partial correlation.
    #[arg(long)]
    reduce_pc: Option<f64>,
    /// Fraction of future candidates added at random.
    #[arg(long)]
    reduce_rand: Option<f64>,
    /// Candidates scored per step; min(5, p) when omitted.
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "y")]
    response: String,
    #[arg(long, value_enum, default_value = "d")]
    vine: VineArg,
    #[arg(long, value_enum, default_value = "two")]
    strategy: StrategyArg,
    #[command(flatten)]
    reduction: ReductionArgs,
    #[arg(long)]
    max_predictors: Option<usize>,
    /// Margin estimator; `uniform` for data already on [0, 1].
    #[arg(long, value_enum, default_value = "kde")]
    margins: MarginArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Selection trace CSV; next to the model when omitted.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_delimiter = ',', value_parser = parse_level, default_value = "0.05,0.5,0.95")]
    alpha: Vec<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, default_value = "y")]
    response: String,
    /// Check-loss levels; every `q_` column when omitted.
    #[arg(long, value_delimiter = ',', value_parser = parse_level)]
    alpha: Vec<f64>,
    /// Score the central interval between the alpha/2 and 1 - alpha/2 columns.
    #[arg(long, value_parser = parse_level)]
    interval_alpha: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchmarkArgs {
    #[arg(long, value_parser = parse_setting)]
    setting: SettingId,
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    /// Replications.
    #[arg(long = "R", alias = "r", default_value_t = 10)]
    replications: usize,
    #[arg(long, default_value_t = 300)]
    n_train: usize,
    #[arg(long, value_delimiter = ',', value_parser = parse_model, default_value = "d1,d2,c1,c2")]
    models: Vec<ModelId>,
    #[command(flatten)]
    reduction: ReductionArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_setting(s: &str) -> Result<SettingId, String> {
    SettingId::parse(s).map_err(|_| format!("unknown setting '{s}' (expected one of a-h)"))
}

fn parse_level(s: &str) -> Result<f64, String> {
    match s.trim().parse::<f64>() {
        Ok(a) if a > 0.0 && a < 1.0 => Ok(a),
        _ => Err(format!("'{s}' is not a level in (0, 1)")),
    }
}

fn parse_model(s: &str) -> Result<ModelId, String> {
    ModelId::parse(s).map_err(|_| format!("unknown model '{s}' (expected d1, d2, c1 or c2)"))
}

impl From<VineArg> for VineKind {
    fn from(v: VineArg) -> Self {
        match v {
            VineArg::C => VineKind::C,
            VineArg::D => VineKind::D,
        }
    }
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::One => Strategy::OneStep,
            StrategyArg::Two => Strategy::TwoStep,
        }
    }
}

impl From<MarginArg> for MarginSpec {
    fn from(m: MarginArg) -> Self {
        match m {
            MarginArg::Kde => MarginSpec::Kde,
            MarginArg::Uniform => MarginSpec::Uniform,
        }
    }
}

fn apply_thread_limit() -> Result<(), CliError> {
    match std::env::var("VQ_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => {
                vineqr::set_thread_limit(n);
                Ok(())
            }
            _ => Err(CliError::Usage(format!(
                "VQ_THREADS must be a positive integer, got '{v}'"
            ))),
        },
        Err(_) => Ok(()),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    apply_thread_limit()?;
    match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Fit(a) => commands::fit(a),
        Command::Predict(a) => commands::predict(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Benchmark(a) => commands::benchmark(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() && !e.to_string().contains("Usage:") {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            return ExitCode::from(e.exit_code().clamp(0, 255) as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
