//! `engage-mil`: feature extraction, synthetic data, training, prediction,
//! localization and evaluation driven by a JSON config.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data error,
//! 4 numeric failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use engage_mil::baselines::BaselineError;
use engage_mil::deepmil::DeepMilError;

mod commands;
mod config;
mod data;
mod models;

use config::{ModelKind, Overrides, RunConfig};

/// Invalid flags, config keys or config values.
#[derive(Debug)]
pub struct UsageError(pub String);

/// Model and dataset disagree on feature kind or shape.
#[derive(Debug)]
pub struct IncompatibleArtifacts(pub String);

/// Predictions include subjects the model was trained on.
#[derive(Debug)]
pub struct InvalidSplit(pub String);

macro_rules! message_error {
    ($($t:ident => $prefix:literal),*) => {$(
        impl std::fmt::Display for $t {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                write!(f, concat!($prefix, ": {}"), self.0)
            }
        }
        impl std::error::Error for $t {}
    )*};
}

message_error!(
    UsageError => "usage",
    IncompatibleArtifacts => "incompatible artifacts",
    InvalidSplit => "invalid split"
);

#[derive(Parser)]
#[command(name = "engage-mil", version, about = "Weakly supervised engagement intensity prediction and localization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract per-segment features from frame archives or pose/gaze tracks.
    Extract(CommonArgs),
    /// Generate a planted-signal dataset and its per-instance truth.
    Synth(CommonArgs),
    /// Split by subject and train a model on the training side.
    Train(CommonArgs),
    /// Predict video-level intensities for unseen subjects.
    Predict(CommonArgs),
    /// Write per-segment intensities for unseen subjects.
    Localize(CommonArgs),
    /// Compute MSE, classwise MSE and PCC of a predictions file.
    Eval(CommonArgs),
    /// Print the effective configuration as JSON.
    ShowConfig(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    /// Model kind to train.
    #[arg(long, value_enum)]
    kind: Option<ModelKind>,
    /// Model directory.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Dataset directory or index file.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the list of feature files read to this file.
    #[arg(long)]
    audit: Option<PathBuf>,
}

impl CommonArgs {
    fn load(&self) -> anyhow::Result<RunConfig> {
        let overrides = Overrides {
            seed: self.seed,
            jobs: self.jobs,
            model_kind: self.kind,
            model: self.model.clone(),
            dataset: self.dataset.clone(),
            out: self.out.clone(),
            audit: self.audit.clone(),
        };
        RunConfig::load(self.config.as_deref(), &overrides)
    }
}

fn run(command: &Command) -> anyhow::Result<()> {
    let (args, action): (&CommonArgs, fn(&RunConfig) -> anyhow::Result<()>) = match command {
        Command::Extract(a) => (a, commands::extract),
        Command::Synth(a) => (a, commands::synth),
        Command::Train(a) => (a, commands::train),
        Command::Predict(a) => (a, commands::predict),
        Command::Localize(a) => (a, commands::localize),
        Command::Eval(a) => (a, commands::eval),
        Command::ShowConfig(a) => (a, |cfg| {
            println!("{}", cfg.pretty());
            Ok(())
        }),
    };
    let cfg = args.load()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = cfg.jobs {
        if jobs == 0 {
            return Err(UsageError("jobs must be >= 1".into()).into());
        }
        pool = pool.num_threads(jobs);
    }
    pool.build()?.install(|| action(&cfg))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        match cause.downcast_ref::<DeepMilError>() {
            Some(DeepMilError::Diverged { .. }) => return 4,
            Some(DeepMilError::InvalidConfig(_)) => return 2,
            _ => {}
        }
        if let Some(BaselineError::Diverged(_)) = cause.downcast_ref::<BaselineError>() {
            return 4;
        }
    }
    3
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ENGAGE_MIL_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
