//! `fusecue`: synthetic data, cue extraction, fusion, augmentation,
//! training, evaluation and parameter accounting from one binary.
//!
//! Exit codes: 0 success, 1 failed validation or processing, 2 usage error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fusecue_core::{CueKind, FusionVariant};

#[derive(Debug, Parser)]
#[command(name = "fusecue", version, about = "Handcrafted-cue fusion for forgery detection")]
pub struct Cli {
    /// Upper bound on worker threads for feature extraction.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic real/fake frame dataset with a manifest.
    Synth(SynthArgs),
    /// Compute one cue channel of an image as an FCT1 tensor.
    Extract(ExtractArgs),
    /// Run a frozen fusion block on an image's two cue channels.
    Fuse(FuseArgs),
    /// Write augmented copies of an image for inspection.
    Augment(AugmentArgs),
    /// Train a detector and write per-epoch checkpoints.
    Train(TrainArgs),
    /// Score manifests with a checkpoint, or a score file, into a report.
    Eval(EvalArgs),
    /// Export the fusion block of a checkpoint as frozen JSON.
    ExportFrozen(ExportArgs),
    /// Print the parameter count the fusion route adds.
    Paramcount(ParamArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Versioned JSON generator config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_videos: Option<usize>,
    #[arg(long)]
    pub frames_per_video: Option<usize>,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub resize_factor: Option<f64>,
    #[arg(long)]
    pub dataset: Option<String>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long, value_parser = parse_cue)]
    pub cue: CueKind,
    /// PGM or PPM image.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[arg(long, value_parser = parse_variant)]
    pub variant: FusionVariant,
    /// Frozen block JSON.
    #[arg(long)]
    pub frozen: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// Versioned JSON augmentation config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Directory receiving `aug_NNN.ppm`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1024)]
    pub seed: u64,
    #[arg(long, default_value_t = 8)]
    pub n_samples: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Versioned JSON run config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `rgb`, `concat:<cue>` or `fused:<variant>`.
    #[arg(long)]
    pub assembly: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Backbone stage widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub widths: Option<Vec<usize>>,
    /// Train without augmentation.
    #[arg(long)]
    pub no_augment: bool,
    /// Manifest; only `train` split records are used.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint directory (`epoch_NNN/`).
    #[arg(long, requires = "manifests", conflicts_with = "scores")]
    pub ckpt: Option<PathBuf>,
    /// Manifests to score; only `test` split records are used.
    #[arg(long, num_args = 1..)]
    pub manifests: Vec<PathBuf>,
    /// JSON-lines of `{dataset, video_id, score, label}` instead of a model.
    #[arg(long, required_unless_present = "ckpt")]
    pub scores: Option<PathBuf>,
    /// Earlier report to compute the delta against.
    #[arg(long)]
    pub baseline_report: Option<PathBuf>,
    #[arg(long, default_value = "baseline")]
    pub baseline_name: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ParamArgs {
    /// Output channels of the backbone's first convolution.
    #[arg(long, default_value_t = 32)]
    pub first_conv_out: usize,
    #[arg(long, default_value_t = 3)]
    pub kernel: usize,
}

fn parse_cue(s: &str) -> Result<CueKind, String> {
    s.parse().map_err(|e: fusecue_core::Error| e.to_string())
}

fn parse_variant(s: &str) -> Result<FusionVariant, String> {
    s.parse().map_err(|e: fusecue_core::Error| e.to_string())
}

/// Short machine-readable class of a failure.
fn error_kind(err: &anyhow::Error) -> &'static str {
    use fusecue_core::Error as E;
    match err.chain().find_map(|e| e.downcast_ref::<E>()) {
        Some(E::InvalidShape(_)) => "invalid_shape",
        Some(E::InvalidArgument(_)) => "invalid_argument",
        Some(E::Format(_)) => "format",
        Some(E::InvalidCode(_)) => "invalid_code",
        Some(E::FrozenViolation) => "frozen_violation",
        Some(E::Manifest(_)) => "manifest",
        Some(E::Leakage { .. }) => "leakage",
        Some(E::UndefinedMetric(_)) => "undefined_metric",
        Some(E::EmptyDataset) => "empty_dataset",
        Some(E::Divergence { .. }) => "divergence",
        Some(E::Io { .. }) => "io",
        Some(E::Json(_)) => "json",
        None => "error",
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // help and version exit 0, usage errors 2
        Err(e) => e.exit(),
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let line = serde_json::json!({
                "error": error_kind(&err),
                "message": format!("{err:#}"),
            });
            eprintln!("{line}");
            ExitCode::from(1)
        }
    }
}
