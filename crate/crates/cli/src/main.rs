mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("usage: {0}")]
    Usage(String),
    #[error("check failed: {0}")]
    Check(String),
    #[error(transparent)]
    Runtime(#[from] gtr_core::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 64,
            Failure::Check(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "gtr", version, about = "Graph transformer for scattering-center scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Config file and `key=value` overrides shared by model-facing commands.
#[derive(Debug, Clone, Args, Default)]
pub struct ConfigArgs {
    /// `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set d_n=32`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Args, Default)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset as JSON lines.
    Gen {
        /// JSON file with class templates; the built-in set when omitted.
        #[arg(long)]
        templates: Option<PathBuf>,
        #[arg(long)]
        per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// `full` for a uniform random angle per record, or a fixed angle in radians.
        #[arg(long, default_value = "full")]
        rotation: String,
    },
    /// Print the node and edge encodings of one record as JSON.
    Encode {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        record: usize,
        #[arg(long, default_value_t = 8)]
        gne_n: usize,
        /// `auto` or a positive kernel width in meters.
        #[arg(long, default_value = "auto")]
        sigma_d: String,
    },
    /// Train a model and write a checkpoint plus per-epoch metrics.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Defaults to `<out>.metrics.jsonl`.
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Evaluate a checkpoint; prints PCC and the confusion matrix.
    Eval {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train the full model and each single-module ablation; one JSON row each.
    Ablate {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        /// Comma-separated training seeds.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Finite-difference check of the full loss on a random scene.
    Gradcheck {
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        label: usize,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        /// Probe at most this many entries per tensor instead of all.
        #[arg(long)]
        sample: Option<usize>,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Gen {
            templates,
            per_class,
            seed,
            out,
            rotation,
        } => commands::gen(templates.as_deref(), per_class, seed, &out, &rotation),
        Command::Encode {
            data,
            record,
            gne_n,
            sigma_d,
        } => commands::encode(&data, record, gne_n, &sigma_d),
        Command::Train {
            data,
            val,
            out,
            metrics,
            train,
            config,
        } => commands::train(data, val, out, metrics, &train, &config),
        Command::Eval {
            data,
            checkpoint,
            config,
        } => commands::eval(data, checkpoint, &config),
        Command::Ablate {
            data,
            test,
            seeds,
            train,
            config,
        } => commands::ablate_cmd(data, test, &seeds, &train, &config),
        Command::Gradcheck {
            k,
            seed,
            label,
            step,
            tol,
            sample,
            config,
        } => commands::gradcheck(k, seed, label, step, tol, sample, &config),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 64 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("gtr: {f}");
            ExitCode::from(f.code())
        }
    }
}
