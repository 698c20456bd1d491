//! Flags, the optional TOML config file, and their merge. Flags win over the
//! file, and the file wins over built-in defaults.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::Failure;

#[derive(Debug, Parser)]
#[command(name = "tokprune", version, about = "Token-classification prompt compression")]
pub struct Cli {
    /// TOML file whose keys mirror the long flags (dashes become underscores).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on a labeled dataset and write a checkpoint.
    Train(TrainArgs),
    /// Per-layer inter-class similarity of a checkpoint over a dataset.
    Diagnose(DiagnoseArgs),
    /// Compress documents, one per input line.
    Compress(CompressArgs),
    /// Classification metrics, achieved ratios and latency over a dataset.
    Evaluate(EvaluateArgs),
    /// Write a rule-labeled synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    /// Feed-forward width; defaults to four times `--dim`.
    #[arg(long)]
    pub ffn_dim: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Checkpoint path; the vocabulary and report are written next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Minimum training-set frequency for a word to enter the vocabulary.
    #[arg(long)]
    pub min_freq: Option<usize>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct CheckpointArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Vocabulary file; defaults to the one saved beside the checkpoint.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub checkpoint: CheckpointArgs,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RequestArgs {
    /// Compression ratio R ≥ 1, keeping a fraction 1/R of the tokens.
    #[arg(long, conflicts_with = "tau")]
    pub ratio: Option<f64>,
    /// Fraction of tokens to keep, in (0, 1].
    #[arg(long)]
    pub tau: Option<f64>,
    /// Weight of the preserve probability in the fused metric.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Score outliers over all tokens instead of per predicted class.
    #[arg(long)]
    pub whole_set: bool,
}

#[derive(Debug, Args)]
pub struct CompressArgs {
    #[command(flatten)]
    pub checkpoint: CheckpointArgs,
    #[command(flatten)]
    pub request: RequestArgs,
    /// Text file with one document per line; `-` reads standard input.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Compressed lines destination; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write per-token scores as JSON lines to this path.
    #[arg(long)]
    pub emit_token_records: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub checkpoint: CheckpointArgs,
    #[command(flatten)]
    pub request: RequestArgs,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Report destination; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also score the kept sets for α = 0, 0.1, …, 1.
    #[arg(long)]
    pub alpha_sweep: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Keys accepted in the config file. Every key is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub emit_token_records: Option<PathBuf>,
    pub beta: Option<f64>,
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
    pub lr: Option<f64>,
    pub seed: Option<u64>,
    pub min_freq: Option<usize>,
    pub layers: Option<usize>,
    pub dim: Option<usize>,
    pub heads: Option<usize>,
    pub ffn_dim: Option<usize>,
    pub max_len: Option<usize>,
    pub ratio: Option<f64>,
    pub tau: Option<f64>,
    pub alpha: Option<f64>,
    pub whole_set: Option<bool>,
    pub alpha_sweep: Option<bool>,
    pub size: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| Failure::Usage(format!("config {}: {e}", path.display())))
    }
}

/// A path from the flag or the file, or a usage error naming the flag.
pub fn required(flag: &Option<PathBuf>, file: &Option<PathBuf>, name: &str) -> Result<PathBuf, Failure> {
    flag.clone()
        .or_else(|| file.clone())
        .ok_or_else(|| Failure::Usage(format!("--{name} is required")))
}

/// Resolves τ from `--ratio` or `--tau`, which may not both be set at the
/// same layer. A flag of either kind overrides both file keys.
pub fn resolve_tau(flags: &RequestArgs, file: &FileConfig) -> Result<f64, Failure> {
    if file.ratio.is_some() && file.tau.is_some() {
        return Err(Failure::Usage("config sets both ratio and tau".into()));
    }
    let ratio = flags.ratio.or(if flags.tau.is_none() { file.ratio } else { None });
    let tau = flags.tau.or(if flags.ratio.is_none() { file.tau } else { None });
    match (ratio, tau) {
        (Some(r), _) if !(r >= 1.0 && r.is_finite()) => {
            Err(Failure::Usage(format!("ratio must be >= 1, got {r}")))
        }
        (Some(r), _) => Ok(1.0 / r),
        (None, Some(t)) => Ok(t),
        (None, None) => Ok(1.0 / DEFAULT_RATIO),
    }
}

pub const DEFAULT_RATIO: f64 = 2.0;
pub const DEFAULT_ALPHA: f64 = 0.5;
