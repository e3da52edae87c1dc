//! The `pneumox` command line: each pipeline stage is a subcommand that
//! reads its inputs from, and writes its artifacts to, one output directory.

pub mod artifacts;
pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

pub use config::RunConfig;

/// Failures surfaced to the operator as a one-line diagnostic.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing prerequisite: {0}")]
    Missing(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Missing(_) => 3,
            CliError::Data(_) => 4,
            CliError::Numeric(_) => 5,
        }
    }

    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<pneumox_core::Error> for CliError {
    fn from(e: pneumox_core::Error) -> Self {
        use pneumox_core::Error as E;
        let msg = e.to_string();
        match e {
            E::Config(_) | E::Parameter(_) => CliError::Config(msg),
            E::Numeric(_) => CliError::Numeric(msg),
            _ => CliError::Data(msg),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "pneumox", version, about = "Two-stage patch-attention pneumonia classifier")]
pub struct Cli {
    /// TOML run configuration. Built-in desk defaults apply to missing keys.
    #[arg(short, long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override a configuration value. `--a.b=v` is shorthand for `--set a.b=v`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Suppress progress and summaries; errors still go to stderr.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset into the data directory.
    Synth,
    /// Train the stage-1 patch classifier.
    TrainPatch,
    /// Slide the stage-1 model over every image and cache the heatmaps.
    Heatmaps,
    /// Train the stage-2 fusion classifier on images plus cached heatmaps.
    TrainFusion,
    /// Run both stages on the given images, or on the test split.
    Predict {
        /// Grayscale PNG or PGM image; repeatable.
        #[arg(long = "image", value_name = "PATH")]
        images: Vec<PathBuf>,
    },
    /// Score the test split and write the evaluation report.
    Eval,
    /// Human versus model accuracy and their union on a reader table.
    CompareReaders {
        /// Reader table; the bundled 25-image set when omitted.
        #[arg(long, value_name = "PATH")]
        readers: Option<PathBuf>,
    },
    /// Print the resolved configuration as TOML.
    Config,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::TrainPatch => "train-patch",
            Command::Heatmaps => "heatmaps",
            Command::TrainFusion => "train-fusion",
            Command::Predict { .. } => "predict",
            Command::Eval => "eval",
            Command::CompareReaders { .. } => "compare-readers",
            Command::Config => "config",
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status.
pub fn run_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<String> = args.into_iter().map(|a| a.into().to_string_lossy().into_owned()).collect();
    let cli = match Cli::try_parse_from(config::rewrite_dotted_flags(args)) {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            // clap's first line carries the diagnostic; usage hints follow
            let rendered = e.render().to_string();
            eprintln!("pneumox: {}", rendered.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: "));
            return 2;
        }
        Err(e) => {
            let _ = e.print();
            return 0;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("pneumox {}: {e}", cli.command.name());
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    if let Command::Config = cli.command {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let _lock = artifacts::DirLock::acquire(&cfg.output_dir)?;
    let ctx = commands::Ctx { cfg: &cfg, quiet: cli.quiet };
    let produced = match &cli.command {
        Command::Synth => ctx.synth()?,
        Command::TrainPatch => ctx.train_patch()?,
        Command::Heatmaps => ctx.heatmaps()?,
        Command::TrainFusion => ctx.train_fusion()?,
        Command::Predict { images } => ctx.predict(images)?,
        Command::Eval => ctx.eval()?,
        Command::CompareReaders { readers } => ctx.compare_readers(readers.as_deref())?,
        Command::Config => unreachable!("handled above"),
    };
    artifacts::write_manifest(&cfg.output_dir, cli.command.name(), cfg.seed, &cfg.hash(), &produced)?;
    Ok(())
}
