//! The `histoseg` command line: synthesis, training, inference, scoring,
//! baselines, cost analysis and group quantification.
//!
//! Every subcommand is also callable in-process through [`run`], which is
//! what the integration and acceptance tests use.

pub mod commands;
pub mod config;
mod error;
mod runlog;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::RunConfig;
pub use error::{CliError, ErrorKind};
pub use runlog::RunLog;

#[derive(Debug, Parser)]
#[command(
    name = "histoseg",
    version,
    about = "Dense trichrome segmentation experiments"
)]
pub struct Cli {
    /// TOML file with any of the sections seed, dataset, synth, augment,
    /// color_limits, train, protocol, kmeans, threshold, colormap.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Master seed; overrides `seed` from the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads. `--threads 1` gives bit-reproducible output.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// Run log path. Defaults to `run.log` in the output directory of
    /// commands that have one.
    #[arg(long, global = true, value_name = "FILE")]
    pub log: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset split into train/ and eval/.
    Synth(commands::synth::SynthArgs),
    /// Train a network and write the selected model with its history.
    Train(commands::train::TrainArgs),
    /// Segment images with a trained model.
    Infer(commands::infer::InferArgs),
    /// Score a model on a labeled dataset.
    Eval(commands::score::EvalArgs),
    /// Score the k-means color clustering baseline.
    Kmeans(commands::score::KmeansArgs),
    /// Score the multiband threshold baseline.
    Threshold(commands::score::ThresholdArgs),
    /// Print parameter and multiply-accumulate counts.
    Analyze(commands::analyze::AnalyzeArgs),
    /// Compare class-area fractions of two groups of segmentations.
    Quantify(commands::quantify::QuantifyArgs),
    /// Write every augmentation of one image for inspection.
    AugmentPreview(commands::preview::PreviewArgs),
}

/// Global options shared by every command.
pub struct Context<'a> {
    pub config: RunConfig,
    pub log_override: Option<PathBuf>,
    pub out: &'a mut (dyn Write + Send),
    /// The command line as given, for the run log.
    pub invocation: String,
}

impl Context<'_> {
    /// Opens the run log at `--log` or else at `default`.
    pub fn open_log(&self, default: Option<PathBuf>) -> Result<RunLog, CliError> {
        let log = RunLog::open(self.log_override.clone().or(default))?;
        log.line(&format!("histoseg {}", env!("CARGO_PKG_VERSION")))?;
        log.line(&format!("command: {}", self.invocation))?;
        log.section("effective config", &self.config.to_toml()?)?;
        Ok(log)
    }
}

/// Parses `args` (program name first), runs the command and writes its
/// report to `out`.
pub fn run<I, T>(args: I, out: &mut (dyn Write + Send)) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let invocation = args
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join(" ");
    let cli = Cli::try_parse_from(&args).map_err(CliError::from_clap)?;
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    let ctx = Context {
        config,
        log_override: cli.log,
        out,
        invocation,
    };
    match cli.threads {
        Some(0) => Err(CliError::usage("--threads must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::usage(format!("thread pool: {e}")))?
            .install(|| dispatch(cli.command, ctx)),
        None => dispatch(cli.command, ctx),
    }
}

fn dispatch(command: Command, mut ctx: Context<'_>) -> Result<(), CliError> {
    match command {
        Command::Synth(a) => commands::synth::cmd_synth(&a, &mut ctx).map(drop),
        Command::Train(a) => commands::train::cmd_train(&a, &mut ctx).map(drop),
        Command::Infer(a) => commands::infer::cmd_infer(&a, &mut ctx).map(drop),
        Command::Eval(a) => commands::score::cmd_eval(&a, &mut ctx).map(drop),
        Command::Kmeans(a) => commands::score::cmd_kmeans(&a, &mut ctx).map(drop),
        Command::Threshold(a) => commands::score::cmd_threshold(&a, &mut ctx).map(drop),
        Command::Analyze(a) => commands::analyze::cmd_analyze(&a, &mut ctx).map(drop),
        Command::Quantify(a) => commands::quantify::cmd_quantify(&a, &mut ctx).map(drop),
        Command::AugmentPreview(a) => {
            commands::preview::cmd_augment_preview(&a, &mut ctx).map(drop)
        }
    }
}

/// Runs the process command line and returns the exit code.
pub fn main_exit_code() -> i32 {
    let mut stdout = std::io::stdout();
    match run(std::env::args_os(), &mut stdout) {
        Ok(()) => 0,
        Err(e) => e.report(),
    }
}
