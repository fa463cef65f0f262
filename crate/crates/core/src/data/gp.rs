//! Gaussian-process videos with closed-form conditionals.
//!
//! Covariance is `temporal ⊗ spatial`, with an AR(1) temporal kernel
//! `a^|i-j|` over frame positions and an RBF spatial kernel plus a noise floor;
//! channels are independent. Small enough shapes keep dense linear algebra
//! exact, which is what the sampler tests rely on.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Video, VideoShape};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct GpVideoSpec {
    pub frames: usize,
    #[serde(default = "one")]
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// AR(1) coefficient between consecutive frames, in `[0, 1)`.
    pub temporal_coeff: f64,
    /// RBF length-scale in pixels.
    pub length_scale: f64,
    /// Added to the spatial kernel diagonal.
    pub noise_floor: f64,
    #[serde(default)]
    pub mean: f64,
    pub seed: u64,
}

fn one() -> usize {
    1
}

impl GpVideoSpec {
    /// 5-frame 2×2 single-channel configuration used by the oracle checks.
    pub fn oracle_default(seed: u64) -> Self {
        Self {
            frames: 5,
            channels: 1,
            height: 2,
            width: 2,
            temporal_coeff: 0.8,
            length_scale: 1.5,
            noise_floor: 0.05,
            mean: 0.0,
            seed,
        }
    }

    pub fn shape(&self) -> VideoShape {
        VideoShape::new(self.frames, self.channels, self.height, self.width)
    }

    pub fn kernel(&self) -> GpKernel {
        GpKernel {
            temporal_coeff: self.temporal_coeff,
            length_scale: self.length_scale,
            noise_floor: self.noise_floor,
            mean: self.mean,
            width: self.width,
        }
    }

    pub fn check(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.temporal_coeff) {
            return Err(Error::param("data", "temporal_coeff must lie in [0, 1)"));
        }
        if self.length_scale <= 0.0 || self.noise_floor < 0.0 {
            return Err(Error::param("data", "length_scale must be > 0 and noise_floor >= 0"));
        }
        if self.frames == 0 || self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(Error::param("data", "GP video dimensions must be positive"));
        }
        Ok(())
    }
}

/// A pixel of a (possibly re-indexed) video: absolute frame position plus
/// channel and spatial coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Site {
    pub frame: i64,
    pub channel: usize,
    pub y: usize,
    pub x: usize,
}

/// The stationary kernel; it does not depend on the video length so it can be
/// evaluated for any set of absolute frame positions.
#[derive(Clone, Debug, PartialEq)]
pub struct GpKernel {
    pub temporal_coeff: f64,
    pub length_scale: f64,
    pub noise_floor: f64,
    pub mean: f64,
    pub width: usize,
}

impl GpKernel {
    pub fn temporal(&self, a: i64, b: i64) -> f64 {
        self.temporal_coeff.powi((a - b).unsigned_abs() as i32)
    }

    pub fn spatial(&self, y0: usize, x0: usize, y1: usize, x1: usize) -> f64 {
        let dy = y0 as f64 - y1 as f64;
        let dx = x0 as f64 - x1 as f64;
        let mut k = (-(dy * dy + dx * dx) / (2.0 * self.length_scale * self.length_scale)).exp();
        if y0 == y1 && x0 == x1 {
            k += self.noise_floor;
        }
        k
    }

    pub fn cov(&self, a: &Site, b: &Site) -> f64 {
        if a.channel != b.channel {
            return 0.0;
        }
        self.temporal(a.frame, b.frame) * self.spatial(a.y, a.x, b.y, b.x)
    }

    pub fn dense(&self, rows: &[Site], cols: &[Site]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| self.cov(&rows[i], &cols[j]))
    }

    /// Exact Gaussian conditional of `query` given `observed = values`.
    pub fn condition(&self, observed: &[Site], values: &[f64], query: &[Site]) -> Result<Conditional> {
        assert_eq!(observed.len(), values.len());
        let prior_cov = self.dense(query, query);
        if observed.is_empty() {
            return Ok(Conditional {
                mean: DVector::from_element(query.len(), self.mean),
                cov: prior_cov,
            });
        }
        let s_oo = self.dense(observed, observed);
        let chol = s_oo.cholesky().ok_or_else(|| Error::Numeric {
            module: "data",
            at: "Cholesky of the observed covariance".into(),
        })?;
        let s_qo = self.dense(query, observed);
        let resid = DVector::from_iterator(values.len(), values.iter().map(|v| v - self.mean));
        let w = chol.solve(&resid);
        let mean = DVector::from_element(query.len(), self.mean) + &s_qo * w;
        let gain = chol.solve(&s_qo.transpose()); // Σ_OO⁻¹ Σ_OQ
        let mut cov = prior_cov - &s_qo * gain;
        cov = (&cov + cov.transpose()) * 0.5;
        Ok(Conditional { mean, cov })
    }
}

#[derive(Clone, Debug)]
pub struct Conditional {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Sites of every pixel of a video, in storage order.
pub fn video_sites(shape: VideoShape, frame_positions: &[i64]) -> Vec<Site> {
    let mut out = Vec::with_capacity(shape.len());
    for &frame in frame_positions.iter().take(shape.frames) {
        for channel in 0..shape.channels {
            for y in 0..shape.height {
                for x in 0..shape.width {
                    out.push(Site { frame, channel, y, x });
                }
            }
        }
    }
    out
}

/// Exact sampler and conditional queries for one [`GpVideoSpec`].
#[derive(Clone, Debug)]
pub struct GpDataset {
    spec: GpVideoSpec,
    kernel: GpKernel,
    chol_t: DMatrix<f64>,
    chol_s: DMatrix<f64>,
}

impl GpDataset {
    pub fn new(spec: GpVideoSpec) -> Result<Self> {
        spec.check()?;
        let kernel = spec.kernel();
        let frames: Vec<i64> = (0..spec.frames as i64).collect();
        let t = DMatrix::from_fn(spec.frames, spec.frames, |i, j| kernel.temporal(frames[i], frames[j]));
        let p = spec.height * spec.width;
        let s = DMatrix::from_fn(p, p, |i, j| {
            kernel.spatial(i / spec.width, i % spec.width, j / spec.width, j % spec.width)
        });
        let not_pd = |what: &str| Error::Numeric {
            module: "data",
            at: format!("Cholesky of the {what} kernel (not positive definite)"),
        };
        let chol_t = t.cholesky().ok_or_else(|| not_pd("temporal"))?.l();
        let chol_s = s.cholesky().ok_or_else(|| not_pd("spatial"))?.l();
        Ok(Self {
            spec,
            kernel,
            chol_t,
            chol_s,
        })
    }

    pub fn spec(&self) -> &GpVideoSpec {
        &self.spec
    }

    pub fn kernel(&self) -> &GpKernel {
        &self.kernel
    }

    /// Full covariance of the flattened video (small shapes only).
    pub fn covariance(&self) -> DMatrix<f64> {
        let sites = self.sites();
        self.kernel.dense(&sites, &sites)
    }

    pub fn sites(&self) -> Vec<Site> {
        let frames: Vec<i64> = (0..self.spec.frames as i64).collect();
        video_sites(self.spec.shape(), &frames)
    }

    /// Exact sample `μ + (L_T ⊗ L_S) ξ` for video `index`.
    pub fn sample(&self, index: usize) -> Video {
        let mut rng = rng::stream(self.spec.seed, index as u64);
        self.sample_with(&mut rng)
    }

    pub fn sample_with<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Video {
        let shape = self.spec.shape();
        let (n, p) = (shape.frames, shape.pixels());
        let mut video = Video::zeros(shape);
        for c in 0..shape.channels {
            let xi = DMatrix::from_fn(n, p, |_, _| rng::box_muller(rng));
            let x = &self.chol_t * xi * self.chol_s.transpose();
            for f in 0..n {
                for q in 0..p {
                    video.set(f, c, q / shape.width, q % shape.width, self.spec.mean + x[(f, q)]);
                }
            }
        }
        video
    }

    pub fn generate(&self, n_videos: usize) -> Vec<Video> {
        (0..n_videos).map(|i| self.sample(i)).collect()
    }

    /// Conditional moments of the pixels at flat indices `query` given the
    /// pixels at flat indices `observed` taking `values`.
    pub fn conditional(&self, observed: &[usize], values: &[f64], query: &[usize]) -> Result<Conditional> {
        let sites = self.sites();
        let pick = |idx: &[usize]| -> Result<Vec<Site>> {
            idx.iter()
                .map(|&i| {
                    sites
                        .get(i)
                        .copied()
                        .ok_or_else(|| Error::index("data", format!("pixel {i} out of range")))
                })
                .collect()
        };
        self.kernel.condition(&pick(observed)?, values, &pick(query)?)
    }

    pub fn conditional_mean(&self, observed: &[usize], values: &[f64], query: &[usize]) -> Result<DVector<f64>> {
        Ok(self.conditional(observed, values, query)?.mean)
    }

    pub fn conditional_cov(&self, observed: &[usize], values: &[f64], query: &[usize]) -> Result<DMatrix<f64>> {
        Ok(self.conditional(observed, values, query)?.cov)
    }
}

/// Convenience wrapper matching the other generators.
pub fn gen_gp_videos(spec: &GpVideoSpec, n_videos: usize) -> Result<Vec<Video>> {
    Ok(GpDataset::new(spec.clone())?.generate(n_videos))
}
