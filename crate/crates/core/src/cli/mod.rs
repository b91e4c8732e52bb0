//! Command-line front end: training, embedding, recovery, evaluation and
//! spectrum analysis over directories of 8-bit images.

mod commands;
pub mod images;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::config::RunConfig;
use crate::error::Error;
use crate::spectrum::DEFAULT_CUTOFF;

pub use commands::{
    analyze_spectrum, embed, evaluate, recover, train, RatioTable, TrainSummary, CONFIG_ECHO, INTERMEDIATES, TRAIN_LOG,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("missing data: {0}")]
    MissingData(String),
    #[error("cannot write output: {0}")]
    Unwritable(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("missing pairs: {0}")]
    MissingPairs(String),
    #[error("training halted: {0}")]
    Halted(String),
    #[error(transparent)]
    Failed(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::MissingData(_) => 2,
            CliError::Unwritable(_) => 3,
            CliError::InvalidConfig(_) => 4,
            CliError::SizeMismatch(_) => 5,
            CliError::MissingPairs(_) => 6,
            CliError::Halted(_) | CliError::Failed(_) => 1,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => CliError::InvalidConfig(m),
            other => CliError::Failed(other),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "shufflemark", version, about = "Self-recovering image watermarks")]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `train.seed` (and the shuffle seed for analyze-spectrum).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Checkpoint to read (embed, recover, evaluate) or write (train).
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// recover: also write the shuffled secret, secret, original and
    /// enhanced estimates.
    #[arg(long, global = true)]
    pub emit_intermediates: bool,
    /// Threads for training data preparation.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    /// Center-crop and resample images of the wrong size.
    #[arg(long, global = true)]
    pub resize: bool,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train every module jointly and write a checkpoint and a JSONL loss log.
    Train {
        /// Overrides `data.train_dir`.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Overrides `train.iterations`.
        #[arg(long)]
        iterations: Option<usize>,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Write 8-bit containers for an image or a directory of images.
    Embed { input: PathBuf },
    /// Localize tampering and restore attacked images.
    Recover { input: PathBuf },
    /// Attack held-out images, recover them and write metric tables.
    Evaluate {
        /// Overrides `data.eval_dir` (the originals).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Pre-attacked images, paired with originals by file stem.
        #[arg(long, requires = "masks")]
        attacked: Option<PathBuf>,
        /// Ground-truth masks for `--attacked`, named `<stem>.png`.
        #[arg(long)]
        masks: Option<PathBuf>,
    },
    /// Spectra and high-frequency ratios of images shuffled at several patch
    /// sizes. Without an input the bundled smooth corpus is used.
    AnalyzeSpectrum {
        input: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = [16, 8, 4, 2, 1])]
        patches: Vec<usize>,
        #[arg(long, default_value_t = DEFAULT_CUTOFF)]
        cutoff: f64,
    },
}

impl Cli {
    /// The configuration file (or defaults) with command-line overrides
    /// applied, validated.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text =
                    std::fs::read_to_string(p).map_err(|e| CliError::InvalidConfig(format!("{}: {e}", p.display())))?;
                RunConfig::parse(&text)?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.io.out_dir = o.clone();
        }
        if let Some(c) = &self.checkpoint {
            cfg.io.checkpoint = Some(c.clone());
        }
        cfg.data.resize |= self.resize;
        if let Command::Train { data, iterations, .. } = &self.command {
            if let Some(d) = data {
                cfg.data.train_dir = Some(d.clone());
            }
            if let Some(n) = iterations {
                cfg.train.iterations = *n;
            }
        }
        if let Command::Evaluate { data: Some(d), .. } = &self.command {
            cfg.data.eval_dir = Some(d.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Runs the parsed command.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = cli.resolve()?;
    match &cli.command {
        Command::Train { resume, .. } => train(&cfg, resume.as_deref(), cli.workers).map(|_| ()),
        Command::Embed { input } => embed(&cfg, input).map(|_| ()),
        Command::Recover { input } => recover(&cfg, input, cli.emit_intermediates).map(|_| ()),
        Command::Evaluate { attacked, masks, .. } => evaluate(&cfg, attacked.as_deref(), masks.as_deref()).map(|_| ()),
        Command::AnalyzeSpectrum { input, patches, cutoff } => {
            analyze_spectrum(input.as_deref(), patches, *cutoff, cli.seed.unwrap_or(0), &cfg.io.out_dir).map(|_| ())
        }
    }
}
