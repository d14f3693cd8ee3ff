mod commands;
mod error;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser, Debug)]
#[command(name = "emp", version, about = "Multimodal motion prediction toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic scenario file.
    Generate(GenerateArgs),
    /// Train a model and write checkpoints plus the epoch log.
    Train(TrainArgs),
    /// Score a checkpoint on a scenario file.
    Eval(EvalArgs),
    /// Write K trajectories and scores per scenario.
    Predict(PredictArgs),
    /// Time batched forward passes.
    Bench(BenchArgs),
    /// Render SVG plots from training logs, evaluation reports and bench results.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Variant {
    #[value(name = "emp-m")]
    EmpM,
    #[value(name = "emp-d")]
    EmpD,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GenProfile {
    Av1,
    Av2,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub count: usize,
    #[arg(long, value_enum, default_value = "av2")]
    pub profile: GenProfile,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training scenarios.
    #[arg(long)]
    pub data: PathBuf,
    /// Held-out scenarios scored after every epoch.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "emp-m")]
    pub model: Variant,
    /// JSON file with optional `train` and `model` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the seed from the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value = "f32")]
    pub precision: Precision,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output directory for `eval_report.jsonl` and `eval_report.csv`.
    #[arg(long)]
    pub out: PathBuf,
    /// Score minADE on the endpoint-best mode (official AV2 convention).
    #[arg(long)]
    pub strict_av2: bool,
    #[arg(long, value_enum, default_value = "f32")]
    pub precision: Precision,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Prediction file (JSON lines).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "f32")]
    pub precision: Precision,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 50)]
    pub reps: usize,
    #[arg(long, default_value_t = 5)]
    pub warmup: usize,
    /// Worker threads; defaults to the hardware parallelism.
    #[arg(long, env = "EMP_THREADS")]
    pub threads: Option<usize>,
    /// Result file; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "f32")]
    pub precision: Precision,
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["log", "report"]))]
pub struct PlotArgs {
    /// Training log (JSON lines): loss and validation curves.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Evaluation report(s); with `--bench`, paired in order for a latency scatter.
    #[arg(long)]
    pub report: Vec<PathBuf>,
    /// Bench result(s) matching each `--report`.
    #[arg(long, requires = "report")]
    pub bench: Vec<PathBuf>,
    /// SVG file.
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => commands::generate(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Bench(a) => commands::bench(&a),
        Command::Plot(a) => plot::plot(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
