//! Reverse-process samplers with known-pixel clamping.
//!
//! Only pixels with mask 0 are integrated; at every network call the input
//! holds the clean observation wherever the mask is 1.

use serde::{Deserialize, Serialize};

use crate::data::Video;
use crate::denoiser::{Denoiser, DenoiserInput};
use crate::error::{Error, Result};
use crate::masks::PixelMask;
use crate::rng::{self, ChaCha8Rng};
use crate::schedule::{sigma_to_alpha_bar, NoiseSchedule, ScheduleKind, SigmaGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Heun,
    Ddpm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    #[serde(default = "default_kind")]
    pub kind: SamplerKind,
    /// Heun grid length, or the number of DDPM steps T.
    #[serde(default = "hundred")]
    pub n_steps: usize,
    #[serde(default = "sigma_min")]
    pub sigma_min: f64,
    #[serde(default = "sigma_max")]
    pub sigma_max: f64,
    #[serde(default = "rho")]
    pub rho: f64,
    #[serde(default = "s_churn")]
    pub s_churn: f64,
    #[serde(default)]
    pub s_min: f64,
    /// `None` means +∞.
    #[serde(default)]
    pub s_max: Option<f64>,
    #[serde(default = "unit")]
    pub s_noise: f64,
    /// ᾱ schedule of the DDPM sampler.
    #[serde(default = "cosine")]
    pub schedule: ScheduleKind,
    #[serde(default)]
    pub seed: u64,
}

fn default_kind() -> SamplerKind {
    SamplerKind::Heun
}
fn hundred() -> usize {
    100
}
fn sigma_min() -> f64 {
    0.002
}
fn sigma_max() -> f64 {
    1000.0
}
fn rho() -> f64 {
    7.0
}
fn s_churn() -> f64 {
    80.0
}
fn unit() -> f64 {
    1.0
}
fn cosine() -> ScheduleKind {
    ScheduleKind::Cosine
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            kind: SamplerKind::Heun,
            n_steps: 100,
            sigma_min: sigma_min(),
            sigma_max: sigma_max(),
            rho: rho(),
            s_churn: s_churn(),
            s_min: 0.0,
            s_max: None,
            s_noise: 1.0,
            schedule: ScheduleKind::Cosine,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn ddpm(n_steps: usize) -> Self {
        Self {
            kind: SamplerKind::Ddpm,
            n_steps,
            ..Self::default()
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::param("sampler", "n_steps must be at least 1"));
        }
        if self.s_churn < 0.0 || self.s_min < 0.0 || self.s_noise < 0.0 || self.s_max.is_some_and(|s| s < 0.0) {
            return Err(Error::param("sampler", "churn parameters must be non-negative"));
        }
        Ok(())
    }

    /// Network evaluations per stage that has missing pixels.
    pub fn nfe(&self) -> usize {
        match self.kind {
            SamplerKind::Heun => 2 * self.n_steps - 1,
            SamplerKind::Ddpm => self.n_steps,
        }
    }

    /// σ levels visited by the Heun sampler, ending in 0. With one step the
    /// grid is `[σ_max, 0]`.
    pub fn sigma_grid(&self) -> Result<Vec<f64>> {
        if self.n_steps == 1 {
            return Ok(vec![self.sigma_max, 0.0]);
        }
        Ok(SigmaGrid::build(self.sigma_min, self.sigma_max, self.rho, self.n_steps)?.sigmas)
    }

    fn churn(&self, sigma: f64) -> f64 {
        let hi = self.s_max.unwrap_or(f64::INFINITY);
        if sigma >= self.s_min && sigma <= hi {
            (self.s_churn / self.n_steps as f64).min(std::f64::consts::SQRT_2 - 1.0)
        } else {
            0.0
        }
    }
}

/// Collated frames of one stage plus the bookkeeping to evaluate the denoiser
/// on the current iterate.
struct StageState<'a> {
    clean: &'a Video,
    mask: &'a PixelMask,
    positions: &'a [usize],
    /// Flat indices of missing values (every channel of mask-0 pixels).
    missing: Vec<usize>,
    scratch: Video,
}

impl<'a> StageState<'a> {
    fn new(clean: &'a Video, mask: &'a PixelMask, positions: &'a [usize]) -> Result<Self> {
        let s = clean.shape();
        if mask.frames() != s.frames || mask.height() != s.height || mask.width() != s.width {
            return Err(Error::param("sampler", "mask shape does not match the frames"));
        }
        if positions.len() != s.frames {
            return Err(Error::param("sampler", "one position per frame required"));
        }
        let mut missing = Vec::new();
        for f in 0..s.frames {
            let m = mask.frame(f);
            for c in 0..s.channels {
                for q in 0..s.pixels() {
                    if m[q] == 0 {
                        missing.push(clean.index(f, c, q / s.width, q % s.width));
                    }
                }
            }
        }
        Ok(Self {
            clean,
            mask,
            positions,
            missing,
            scratch: clean.clone(),
        })
    }

    /// ε̂ at the missing entries for the network input `vp` (already in the
    /// VP convention) at noise level `sigma`.
    fn eps<D: Denoiser + ?Sized>(&mut self, d: &D, vp: &[f64], sigma: f64) -> Result<Vec<f64>> {
        let buf = self.scratch.data_mut();
        for (&i, &v) in self.missing.iter().zip(vp) {
            buf[i] = v;
        }
        let out = d.predict_eps(&DenoiserInput {
            frames: &self.scratch,
            mask: self.mask,
            positions: self.positions,
            sigma,
        })?;
        Ok(self.missing.iter().map(|&i| out.data()[i]).collect())
    }

    fn finish(&self, x: &[f64]) -> Video {
        let mut out = self.clean.clone();
        let buf = out.data_mut();
        for (&i, &v) in self.missing.iter().zip(x) {
            buf[i] = v;
        }
        out
    }
}

fn check_finite(x: &[f64], step: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric {
            module: "sampler",
            at: format!("step {step}"),
        })
    }
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng::box_muller(rng)).collect()
}

/// Samples the missing pixels of collated frames.
///
/// `frames` must hold valid values wherever `mask` is 1; other entries are
/// ignored. Returns all frames, with mask-1 values bit-identical to the input.
pub fn sample_frames<D: Denoiser + ?Sized>(
    d: &D,
    frames: &Video,
    mask: &PixelMask,
    positions: &[usize],
    cfg: &SamplerConfig,
) -> Result<Video> {
    cfg.check()?;
    if frames.shape().frames > d.max_frames() {
        return Err(Error::Capacity {
            module: "sampler",
            frames: frames.shape().frames,
            budget: d.max_frames(),
        });
    }
    let mut st = StageState::new(frames, mask, positions)?;
    if st.missing.is_empty() {
        return Ok(frames.clone());
    }
    let mut rng = rng::stream(cfg.seed, 0);
    let x = match cfg.kind {
        SamplerKind::Heun => heun(d, &mut st, cfg, &mut rng)?,
        SamplerKind::Ddpm => ddpm(d, &mut st, cfg, &mut rng)?,
    };
    Ok(st.finish(&x))
}

fn heun<D: Denoiser + ?Sized>(d: &D, st: &mut StageState<'_>, cfg: &SamplerConfig, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let sig = cfg.sigma_grid()?;
    let n = st.missing.len();
    let mut x: Vec<f64> = normals(rng, n).into_iter().map(|z| z * sig[0]).collect();
    let mut vp = vec![0.0; n];
    for i in 0..cfg.n_steps {
        let (s_cur, s_next) = (sig[i], sig[i + 1]);
        let gamma = cfg.churn(s_cur);
        let s_hat = s_cur * (1.0 + gamma);
        if gamma > 0.0 {
            let inflate = (s_hat * s_hat - s_cur * s_cur).sqrt() * cfg.s_noise;
            for (xi, z) in x.iter_mut().zip(normals(rng, n)) {
                *xi += inflate * z;
            }
        }
        let scale = sigma_to_alpha_bar(s_hat).scale;
        vp.iter_mut().zip(&x).for_each(|(v, &xi)| *v = xi * scale);
        // dx/dσ = (x - D(x))/σ = ε̂
        let d1 = st.eps(d, &vp, s_hat)?;
        let h = s_next - s_hat;
        let mut x_next: Vec<f64> = x.iter().zip(&d1).map(|(&xi, &di)| xi + h * di).collect();
        if s_next > 0.0 {
            let scale = sigma_to_alpha_bar(s_next).scale;
            vp.iter_mut().zip(&x_next).for_each(|(v, &xi)| *v = xi * scale);
            let d2 = st.eps(d, &vp, s_next)?;
            for ((xn, &xi), (&a, &b)) in x_next.iter_mut().zip(&x).zip(d1.iter().zip(&d2)) {
                *xn = xi + h * 0.5 * (a + b);
            }
        }
        check_finite(&x_next, i)?;
        x = x_next;
    }
    Ok(x)
}

fn ddpm<D: Denoiser + ?Sized>(d: &D, st: &mut StageState<'_>, cfg: &SamplerConfig, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let t_max = cfg.n_steps;
    let sched = if t_max == 1 {
        None
    } else {
        Some(NoiseSchedule::build(cfg.schedule, t_max)?)
    };
    // a one-step chain is defined by its final ᾱ alone
    let ab = |t: usize| match &sched {
        Some(s) => s.alpha_bar(t),
        None => {
            if t == 0 {
                1.0
            } else {
                NoiseSchedule::continuous(cfg.schedule, 1.0)
            }
        }
    };
    let n = st.missing.len();
    let mut x = normals(rng, n);
    for t in (1..=t_max).rev() {
        let (a_t, a_prev) = (ab(t), ab(t - 1));
        let sigma = ((1.0 - a_t) / a_t).sqrt();
        let eps = st.eps(d, &x, sigma)?;
        let beta = 1.0 - a_t / a_prev;
        let (sa, sn) = (a_t.sqrt(), (1.0 - a_t).sqrt());
        let c0 = a_prev.sqrt() * beta / (1.0 - a_t);
        let ct = (1.0 - beta).sqrt() * (1.0 - a_prev) / (1.0 - a_t);
        let var = (1.0 - a_prev) / (1.0 - a_t) * beta;
        let noise = if t > 1 { normals(rng, n) } else { vec![0.0; n] };
        for ((xi, &e), z) in x.iter_mut().zip(&eps).zip(noise) {
            let x0 = (*xi - sn * e) / sa;
            *xi = if t == 1 { x0 } else { c0 * x0 + ct * *xi + var.sqrt() * z };
        }
        check_finite(&x, t_max - t)?;
    }
    Ok(x)
}

/// One stage over a full video: collates `X ⊕ Y`, samples, and returns the
/// sampled frames in that order.
pub fn sample_stage<D: Denoiser + ?Sized>(
    d: &D,
    v: &Video,
    m: &PixelMask,
    x_idx: &[usize],
    y_idx: &[usize],
    cfg: &SamplerConfig,
) -> Result<Video> {
    let order: Vec<usize> = x_idx.iter().chain(y_idx).copied().collect();
    let budget = d.max_frames();
    if order.len() > budget {
        return Err(Error::Capacity {
            module: "sampler",
            frames: order.len(),
            budget,
        });
    }
    let frames = v.select_frames(&order)?;
    let mask = m.select_frames(&order)?;
    sample_frames(d, &frames, &mask, &order, cfg)
}
