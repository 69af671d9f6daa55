mod run;
mod sweeps;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ltc_core::cells::{Activation, CellKind};
use ltc_core::data::MissingPolicy;
use ltc_core::solvers::SolverKind;
use ltc_core::training::MetricKind;

use run::{exit_code_for, strip_out_flag, Run, RunManifest, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE};

/// Liquid time-constant networks and continuous-time baselines.
#[derive(Debug, Parser)]
#[command(name = "ltc", version)]
struct Cli {
    /// Output directory for reports, checkpoints and the run manifest.
    #[arg(long, global = true, env = "LTC_OUT_DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model on a CSV time series.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a split of a CSV file.
    Eval(EvalArgs),
    /// Trajectory-length sweep on the circular input.
    Expressivity(SweepArgs),
    /// Adaptive-solver steps per input sample.
    Depth(SweepArgs),
    /// Trajectory length of one configuration under several solvers.
    SolverCompare(CompareArgs),
    /// Randomized check of the state and time-constant bounds.
    Bounds(BoundsArgs),
    /// Re-run a recorded manifest and compare its outputs byte for byte.
    Replay(ReplayArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Expressivity(_) => "expressivity",
            Command::Depth(_) => "depth",
            Command::SolverCompare(_) => "solver-compare",
            Command::Bounds(_) => "bounds",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Task {
    Regression,
    Classification,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated input columns.
    #[arg(long, value_delimiter = ',', required = true)]
    pub features: Vec<String>,
    /// Comma-separated target columns (one label column for classification).
    #[arg(long, value_delimiter = ',', required = true)]
    pub targets: Vec<String>,
    /// Column whose changes separate independent sequences.
    #[arg(long)]
    pub sequence_column: Option<String>,
    /// Handling of empty cells: zero, forward-fill or error.
    #[arg(long, default_value = "zero")]
    pub missing: MissingPolicy,
    #[arg(long, default_value_t = 32)]
    pub window: usize,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// Train:validation:test proportions.
    #[arg(long, default_value = "75:10:15", value_parser = parse_ratios)]
    pub split: [f64; 3],
    /// Seed of the window-level split.
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    /// Also standardize regression targets with training statistics.
    #[arg(long)]
    pub normalize_targets: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value = "ltc")]
    pub model: CellKind,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "regression")]
    pub task: Task,
    /// Selection metric; defaults to mse (regression) or accuracy.
    #[arg(long, value_parser = parse_metric)]
    pub metric: Option<MetricKind>,
    /// Per-class loss weights (classification only).
    #[arg(long, value_delimiter = ',')]
    pub class_weights: Vec<f64>,
    #[arg(long, default_value_t = 32)]
    pub hidden_units: usize,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    /// Solver sub-steps per input sample.
    #[arg(long, default_value_t = 6)]
    pub substeps: usize,
    #[arg(long, default_value_t = 1.0)]
    pub sample_period: f64,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    /// euler, rk4 or fused; defaults to fused for LTC and rk4 otherwise.
    #[arg(long)]
    pub solver: Option<SolverKind>,
    #[arg(long, default_value = "sigmoid")]
    pub activation: Activation,
    #[arg(long, default_value_t = 10.0)]
    pub grad_clip: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitName,
    /// Override the feature columns recorded in the checkpoint.
    #[arg(long, value_delimiter = ',')]
    pub features: Vec<String>,
    /// Override the target columns recorded in the checkpoint.
    #[arg(long, value_delimiter = ',')]
    pub targets: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Comma-separated cell kinds.
    #[arg(long, value_delimiter = ',', default_value = "node,ctrnn,ltc")]
    pub models: Vec<CellKind>,
    #[arg(long, default_value = "hard-tanh")]
    pub activation: Activation,
    #[arg(long, default_value_t = 100)]
    pub width: usize,
    #[arg(long, default_value_t = 1)]
    pub layers: usize,
    /// Weight variance σ_w².
    #[arg(long, default_value_t = 2.0)]
    pub sw2: f64,
    /// Bias variance σ_b².
    #[arg(long, default_value_t = 1.0)]
    pub sb2: f64,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    /// Number of input samples on the circle (629 = full turn at dt 0.01).
    #[arg(long, default_value_t = 629)]
    pub samples: usize,
    #[arg(long, default_value_t = 0.01)]
    pub dt: f64,
    /// dopri45, fused, rk4 or euler.
    #[arg(long, default_value = "dopri45")]
    pub solver: SolverKind,
    #[arg(long, default_value_t = 1e-6)]
    pub rtol: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub atol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write every latent path as CSV.
    #[arg(long)]
    pub keep_paths: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub sweep: SweepArgs,
    #[arg(long, value_delimiter = ',', default_value = "dopri45,fused,rk4,euler")]
    pub solvers: Vec<SolverKind>,
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.1)]
    pub dt: f64,
    #[arg(long, default_value_t = 16)]
    pub max_neurons: usize,
    #[arg(long, default_value_t = 4)]
    pub max_inputs: usize,
    #[arg(long, default_value_t = 1e6)]
    pub input_amp: f64,
    /// fused or dopri45.
    #[arg(long, default_value = "fused")]
    pub solver: SolverKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub max_recorded: usize,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    /// Manifest written by an earlier run.
    manifest: PathBuf,
}

fn parse_ratios(s: &str) -> std::result::Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split([':', ','])
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    let [a, b, c] = parts[..] else {
        return Err(format!("expected three proportions, got {}", parts.len()));
    };
    let total = a + b + c;
    if [a, b, c].iter().any(|v| !(*v >= 0.0)) || !(total > 0.0) {
        return Err("proportions must be non-negative with a positive sum".into());
    }
    Ok([a / total, b / total, c / total])
}

fn parse_metric(s: &str) -> std::result::Result<MetricKind, String> {
    match s {
        "mse" => Ok(MetricKind::Mse),
        "accuracy" => Ok(MetricKind::Accuracy),
        "f1" => Ok(MetricKind::F1),
        other => Err(format!("unknown metric {other:?} (mse, accuracy, f1)")),
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("ltc-out")
}

fn execute(command: &Command, run: &mut Run) -> Result<u8> {
    match command {
        Command::Train(a) => train::cmd_train(a, run),
        Command::Eval(a) => train::cmd_eval(a, run),
        Command::Expressivity(a) => sweeps::cmd_expressivity(a, run),
        Command::Depth(a) => sweeps::cmd_depth(a, run),
        Command::SolverCompare(a) => sweeps::cmd_solver_compare(a, run),
        Command::Bounds(a) => sweeps::cmd_bounds(a, run),
        Command::Replay(_) => bail!("replay cannot be nested"),
    }
}

/// Runs one command into `out` and always leaves a manifest behind.
fn run_recorded(command: &Command, args: Vec<String>, out: PathBuf) -> Result<(u8, RunManifest)> {
    let mut run = Run::new(out)?;
    let (code, error) = match execute(command, &mut run) {
        Ok(code) => (code, None),
        Err(e) => {
            eprintln!("error: {e:#}");
            (exit_code_for(&e), Some(format!("{e:#}")))
        }
    };
    let manifest = run.finish(command.name(), args, code, error)?;
    Ok((code, manifest))
}

fn replay(args: &ReplayArgs, out: Option<PathBuf>) -> Result<u8> {
    let original = RunManifest::load(&args.manifest)?;
    let source_dir = args.manifest.parent().map(PathBuf::from).unwrap_or_default();
    let source_dir = std::path::absolute(&source_dir)?;
    let out = std::path::absolute(out.unwrap_or_else(|| source_dir.join("replay")))?;
    std::env::set_current_dir(&original.working_directory)
        .with_context(|| format!("entering {}", original.working_directory.display()))?;
    let argv = std::iter::once("ltc".to_string()).chain(original.args.iter().cloned());
    let cli = Cli::try_parse_from(argv).context("manifest arguments no longer parse")?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(run::usage("a replay manifest cannot be replayed"));
    }
    let (code, manifest) = run_recorded(&cli.command, original.args.clone(), out.clone())?;
    let mut mismatches = Vec::new();
    for name in &original.outputs {
        let a = std::fs::read(source_dir.join(name)).with_context(|| format!("reading original {name}"))?;
        match std::fs::read(out.join(name)) {
            Ok(b) if a == b => {}
            _ => mismatches.push(name.clone()),
        }
    }
    if manifest.outputs != original.outputs {
        mismatches.push("(output file list)".into());
    }
    if code != original.exit_code {
        mismatches.push(format!("(exit code {code}, originally {})", original.exit_code));
    }
    if mismatches.is_empty() {
        println!("replay identical: {} output files in {}", original.outputs.len(), out.display());
        Ok(EXIT_OK)
    } else {
        println!("replay differs: {}", mismatches.join(", "));
        Ok(EXIT_RUNTIME)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Replay(a) => replay(a, cli.out.clone()),
        command => {
            let args = strip_out_flag(&std::env::args().skip(1).collect::<Vec<_>>());
            run_recorded(command, args, cli.out.clone().unwrap_or_else(default_out)).map(|(code, _)| code)
        }
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
