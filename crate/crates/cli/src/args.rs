use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use vidinpaint_core::masks::{MaskFamily, Motion};
use vidinpaint_core::SchemeKind;

#[derive(Debug, Parser)]
#[command(name = "vidinpaint", version, about = "Video inpainting with mask-conditioned diffusion")]
pub struct Cli {
    /// Print a machine-readable JSON report on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    /// Seed overriding the one in any config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for relative output paths.
    #[arg(long, global = true, env = "VIDINPAINT_OUT_DIR", default_value = ".")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic video dataset (and flows for sprites).
    GenData(GenDataArgs),
    /// Generate random occlusion masks.
    GenMasks(GenMasksArgs),
    /// Plan a sampling scheme and optionally render it.
    Plan(PlanArgs),
    /// Train a denoiser from a JSON config.
    Train(TrainArgs),
    /// Inpaint videos stage by stage.
    Inpaint(InpaintArgs),
    /// Score inpainted videos against ground truth.
    Eval(EvalArgs),
    /// Check the sampler against an exact Gaussian conditional.
    OracleCheck(OracleCheckArgs),
    /// Print or write the published JSON schemas.
    Schema(SchemaArgs),
}

/// Parses a value through its serde string form, so the CLI accepts exactly
/// the names used in config files.
pub fn serde_value<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn scheme_kind(s: &str) -> Result<SchemeKind, String> {
    s.parse().map_err(|e: vidinpaint_core::Error| e.to_string())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DataKind {
    Sprites,
    Gp,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Dataset config (`{"data": {...}, "n_videos": N}`); overrides --kind and --videos.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "sprites")]
    pub kind: DataKind,
    #[arg(long, default_value_t = 16)]
    pub videos: usize,
    #[arg(long, default_value = "videos.vt")]
    pub out: PathBuf,
    /// Flow output, sprites only.
    #[arg(long, default_value = "flows.vt")]
    pub flows: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenMasksArgs {
    /// Masks config; overrides the shape flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub frames: usize,
    #[arg(long, default_value_t = 16)]
    pub height: usize,
    #[arg(long, default_value_t = 16)]
    pub width: usize,
    #[arg(long, default_value_t = 16)]
    pub count: usize,
    /// grid, lines, box or blob; random per mask when absent.
    #[arg(long, value_parser = serde_value::<MaskFamily>)]
    pub family: Option<MaskFamily>,
    /// moving or stationary; random per mask when absent.
    #[arg(long, value_parser = serde_value::<Motion>)]
    pub motion: Option<Motion>,
    #[arg(long, default_value = "masks.vt")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long, value_parser = scheme_kind)]
    pub kind: SchemeKind,
    #[arg(long)]
    pub frames: usize,
    #[arg(long)]
    pub budget: usize,
    /// Lookahead split as `latent,past,future`.
    #[arg(long)]
    pub split: Option<String>,
    /// Write the scheme JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write a PPM rendering here.
    #[arg(long)]
    pub render: Option<PathBuf>,
    /// Rendered cell size in pixels.
    #[arg(long, default_value_t = 8)]
    pub cell: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Checkpoint to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Override the config's step count.
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Weights {
    Ema,
    Raw,
}

#[derive(Debug, Args)]
pub struct InpaintArgs {
    #[arg(long)]
    pub video: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    /// Trained network checkpoint.
    #[arg(long, group = "denoiser")]
    pub checkpoint: Option<PathBuf>,
    /// GP spec JSON; uses the exact Gaussian denoiser.
    #[arg(long, group = "denoiser")]
    pub oracle: Option<PathBuf>,
    /// Copy each missing pixel from the nearest frame where it is known.
    #[arg(long, group = "denoiser")]
    pub baseline: bool,
    /// Scheme JSON written by `plan`.
    #[arg(long, group = "scheme_src")]
    pub scheme: Option<PathBuf>,
    #[arg(long, group = "scheme_src", value_parser = scheme_kind)]
    pub kind: Option<SchemeKind>,
    #[arg(long, default_value_t = 8)]
    pub budget: usize,
    /// Sampler config JSON.
    #[arg(long)]
    pub sampler: Option<PathBuf>,
    /// Override the sampler's step count.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, value_enum, default_value = "ema")]
    pub weights: Weights,
    #[arg(long, default_value = "inpainted.vt")]
    pub out: PathBuf,
    /// Write per-stage summaries (JSON) here.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Manifest of entries to score; replaces the single-entry flags.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub flow: Option<PathBuf>,
    #[arg(long, default_value = "pred")]
    pub name: String,
    /// Also emit one row per video.
    #[arg(long)]
    pub per_video: bool,
    /// Write the table as CSV here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleCheckArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Override the sampler's step count.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SchemaArgs {
    /// Schema to print; lists the names when absent.
    pub name: Option<String>,
    /// Write every schema into this directory instead.
    #[arg(long)]
    pub write: Option<PathBuf>,
}
