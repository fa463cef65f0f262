//! Config files read by the commands and the JSON reports they print.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use vidinpaint_core::masks::{MaskFamily, Motion};
use vidinpaint_core::metrics::MetricRow;
use vidinpaint_core::orchestrator::StageSummary;
use vidinpaint_core::train::TrainData;
use vidinpaint_core::{SamplingScheme, VideoShape};

/// Config of `gen-data`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub data: TrainData,
    pub n_videos: usize,
}

/// Config of `gen-masks`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct MasksConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub count: usize,
    #[serde(default)]
    pub family: Option<MaskFamily>,
    #[serde(default)]
    pub motion: Option<Motion>,
    #[serde(default)]
    pub seed: u64,
}

/// One comparison in an `eval` manifest. Paths are relative to the
/// working directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct EvalEntry {
    pub name: String,
    pub truth: String,
    pub pred: String,
    #[serde(default)]
    pub mask: Option<String>,
    #[serde(default)]
    pub flow: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct EvalManifest {
    pub entries: Vec<EvalEntry>,
}

/// A written file and its SHA-256.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct FileRef {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct GenDataReport {
    pub kind: String,
    pub n_videos: usize,
    pub shape: VideoShape,
    pub videos: FileRef,
    pub flows: Option<FileRef>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct GenMasksReport {
    pub count: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub mean_missing_fraction: f64,
    pub masks: FileRef,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct PlanReport {
    pub scheme: SamplingScheme,
    pub n_stages: usize,
    pub stages_sha256: String,
    pub file: Option<FileRef>,
    pub render: Option<FileRef>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct TrainReport {
    pub start_step: usize,
    pub final_step: usize,
    pub n_params: usize,
    /// Mean loss over the first and last (up to) 100 steps of this run.
    pub loss_first: Option<f64>,
    pub loss_last: Option<f64>,
    pub loss_csv: FileRef,
    pub checkpoint: FileRef,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct InpaintReport {
    pub denoiser: String,
    pub n_videos: usize,
    pub n_stages: usize,
    pub stages_sha256: String,
    /// Network calls per stage that had missing pixels.
    pub nfe_per_stage: usize,
    /// Stages that ran the sampler, summed over videos.
    pub sampled_stages: usize,
    pub output: FileRef,
    pub trace: Option<FileRef>,
}

/// Per-video stage summaries written by `inpaint --trace`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct InpaintTrace {
    pub stages_sha256: String,
    pub videos: Vec<Vec<StageSummary>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct EvalReport {
    pub rows: Vec<MetricRow>,
}
