//! Video inpainting with mask-conditioned diffusion models.
//!
//! The crate is organised around the pipeline it implements:
//!
//! * [`schedule`] – discrete ᾱ tables and continuous σ grids.
//! * [`masks`] – procedural occlusion masks and mask algebra.
//! * [`schemes`] – frame-index sampling schemes under a K-frame budget.
//! * [`denoiser`] – the ε-prediction interface, a compact trainable network
//!   and an exact Gaussian-process oracle.
//! * [`train`] – masked-loss training with AdamW and EMA.
//! * [`sampler`] – stochastic Heun and ancestral DDPM with known-pixel clamping.
//! * [`orchestrator`] – stage-by-stage inpainting of whole videos.
//! * [`data`] – synthetic datasets and the binary tensor file format.
//! * [`metrics`] – PSNR, SSIM and flow-warp error.
//! * [`oracle_check`] – Monte-Carlo sampler check against an exact Gaussian
//!   conditional.

pub mod data;
pub mod denoiser;
mod error;
pub mod masks;
pub mod metrics;
pub mod oracle_check;
pub mod orchestrator;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod schemes;
pub mod train;

pub use data::{Video, VideoShape};
pub use denoiser::{Denoiser, DenoiserInput, GaussianOracle, Network};
pub use error::{Error, Result};
pub use masks::{MaskSpec, PixelMask};
pub use orchestrator::{inpaint, stage_trace};
pub use sampler::{SamplerConfig, SamplerKind};
pub use schedule::{NoiseSchedule, ScheduleKind, SigmaGrid};
pub use schemes::{FrameIndexSet, SamplingScheme, SchemeKind};
