//! ε-prediction denoisers.

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::data::Video;
use crate::error::{Error, Result};
use crate::masks::PixelMask;
use crate::schedule::NoiseSchedule;

mod checkpoint;
mod network;
mod oracle;

pub use checkpoint::{Checkpoint, OptimizerState};
pub use network::{init_params, noise_embedding, param_count, DenoiserParams, NetArch, Network, ParamEntry, Tape};
pub use oracle::GaussianOracle;

/// One network call.
///
/// `frames` holds the collated frames `V[X ⊕ Y]` in the variance-preserving
/// convention: clean values where `mask` is 1, `√ᾱ x + √(1-ᾱ) ε` where it is 0.
/// The noise level is carried as `sigma = √((1-ᾱ)/ᾱ)`.
#[derive(Clone, Copy, Debug)]
pub struct DenoiserInput<'a> {
    pub frames: &'a Video,
    pub mask: &'a PixelMask,
    /// Absolute frame indices of `frames`, in the same order.
    pub positions: &'a [usize],
    pub sigma: f64,
}

impl DenoiserInput<'_> {
    /// Input for discrete step `t` of `schedule`.
    pub fn sigma_of_step(schedule: &NoiseSchedule, t: usize) -> f64 {
        schedule.sigma(t)
    }

    pub fn check(&self, budget: usize) -> Result<()> {
        let s = self.frames.shape();
        if s.frames > budget {
            return Err(Error::Capacity {
                module: "denoiser",
                frames: s.frames,
                budget,
            });
        }
        if self.mask.frames() != s.frames || self.mask.height() != s.height || self.mask.width() != s.width {
            return Err(Error::param(
                "denoiser",
                format!(
                    "mask {}x{}x{} does not match frames {}x{}x{}",
                    self.mask.frames(),
                    self.mask.height(),
                    self.mask.width(),
                    s.frames,
                    s.height,
                    s.width
                ),
            ));
        }
        if self.positions.len() != s.frames {
            return Err(Error::param(
                "denoiser",
                format!("{} positions for {} frames", self.positions.len(), s.frames),
            ));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::param("denoiser", format!("noise level {} is negative", self.sigma)));
        }
        Ok(())
    }
}

/// Predicts the noise component of every pixel of a collated input.
pub trait Denoiser: Send + Sync {
    /// Largest `|X| + |Y|` accepted per call.
    fn max_frames(&self) -> usize;

    fn predict_eps(&self, input: &DenoiserInput<'_>) -> Result<Video>;
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn max_frames(&self) -> usize {
        (**self).max_frames()
    }

    fn predict_eps(&self, input: &DenoiserInput<'_>) -> Result<Video> {
        (**self).predict_eps(input)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn max_frames(&self) -> usize {
        (**self).max_frames()
    }

    fn predict_eps(&self, input: &DenoiserInput<'_>) -> Result<Video> {
        (**self).predict_eps(input)
    }
}

/// Always predicts zero noise.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroDenoiser;

impl Denoiser for ZeroDenoiser {
    fn max_frames(&self) -> usize {
        usize::MAX
    }

    fn predict_eps(&self, input: &DenoiserInput<'_>) -> Result<Video> {
        input.check(self.max_frames())?;
        Ok(Video::zeros(input.frames.shape()))
    }
}

/// Wraps a denoiser and counts its calls.
#[derive(Debug, Default)]
pub struct CountingDenoiser<D> {
    pub inner: D,
    calls: AtomicUsize,
}

impl<D> CountingDenoiser<D> {
    pub fn new(inner: D) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }
}

impl<D: Denoiser> Denoiser for CountingDenoiser<D> {
    fn max_frames(&self) -> usize {
        self.inner.max_frames()
    }

    fn predict_eps(&self, input: &DenoiserInput<'_>) -> Result<Video> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.predict_eps(input)
    }
}
