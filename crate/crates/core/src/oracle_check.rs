//! Monte-Carlo check of a sampler against the exact Gaussian conditional.
//!
//! One GP video is drawn, its first and last frames are observed, the middle
//! frame is half observed (checkerboard) and the rest is missing. Two runs are
//! made with the [`GaussianOracle`]:
//!
//! * direct: every interior frame is latent, conditioned on the two end frames;
//! * marginal: the second-to-last frame becomes an incomplete conditioning
//!   frame whose missing pixels are sampled jointly and discarded.
//!
//! Both must reproduce the moments of `x | y` where `y` is the observed pixels.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::gp::GpDataset;
use crate::data::{GpVideoSpec, Video};
use crate::denoiser::GaussianOracle;
use crate::error::{Error, Result};
use crate::masks::PixelMask;
use crate::rng;
use crate::sampler::{sample_stage, SamplerConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct OracleCheckConfig {
    #[serde(default = "samples")]
    pub samples: usize,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default = "gp")]
    pub gp: GpVideoSpec,
    /// Index of the GP video providing the observations.
    #[serde(default)]
    pub video_index: usize,
    /// Pass threshold on `|mean - exact| / stderr`, per pixel.
    #[serde(default = "z_limit")]
    pub mean_z_limit: f64,
    /// Pass threshold on `‖Ĉ - C‖_F / ‖C‖_F`.
    #[serde(default = "cov_limit")]
    pub cov_rel_limit: f64,
    /// Worker threads; results do not depend on it.
    #[serde(default = "one")]
    pub threads: usize,
}

fn samples() -> usize {
    20_000
}
fn gp() -> GpVideoSpec {
    GpVideoSpec::oracle_default(0)
}
fn z_limit() -> f64 {
    3.0
}
fn cov_limit() -> f64 {
    0.10
}
fn one() -> usize {
    1
}

impl Default for OracleCheckConfig {
    fn default() -> Self {
        Self {
            samples: samples(),
            sampler: SamplerConfig::default(),
            gp: gp(),
            video_index: 0,
            mean_z_limit: z_limit(),
            cov_rel_limit: cov_limit(),
            threads: 1,
        }
    }
}

/// Sample moments of one run against the exact conditional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct MomentCheck {
    /// Latent frames of the run, then the conditioning frames.
    pub x: Vec<usize>,
    pub y: Vec<usize>,
    /// Missing pixels compared (those of the `x` frames).
    pub pixels: usize,
    /// Largest per-pixel `|mean - exact| / stderr`.
    pub max_mean_z: f64,
    pub cov_rel_error: f64,
    pub mean_ok: bool,
    pub cov_ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct OracleReport {
    pub samples: usize,
    /// Network calls per sample.
    pub nfe: usize,
    pub direct: MomentCheck,
    pub marginal: MomentCheck,
    pub passed: bool,
}

/// Observation pattern of the check for an `n`-frame video.
pub fn oracle_mask(n: usize, h: usize, w: usize) -> PixelMask {
    let mut m = PixelMask::zeros(n, h, w);
    for y in 0..h {
        for x in 0..w {
            m.set(0, y, x, true);
            m.set(n - 1, y, x, true);
            if (x + y) % 2 == 0 {
                m.set(n / 2, y, x, true);
            }
        }
    }
    m
}

/// Sample moments of `draws` (one row per sample).
pub fn sample_moments(draws: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let s = draws.len();
    let d = draws.first().map_or(0, Vec::len);
    let mut mean = DVector::zeros(d);
    for r in draws {
        mean += DVector::from_column_slice(r);
    }
    mean /= s as f64;
    let mut cov = DMatrix::zeros(d, d);
    for r in draws {
        let c = DVector::from_column_slice(r) - &mean;
        cov += &c * c.transpose();
    }
    cov /= (s as f64 - 1.0).max(1.0);
    (mean, cov)
}

/// Compares sample moments with the exact `N(mean, cov)`.
pub fn compare_moments(
    draws: &[Vec<f64>],
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    z_limit: f64,
    cov_limit: f64,
) -> (f64, f64, bool, bool) {
    let (m, c) = sample_moments(draws);
    let s = draws.len() as f64;
    let max_z = (0..mean.len())
        .map(|i| {
            let se = (c[(i, i)] / s).sqrt();
            let d = (m[i] - mean[i]).abs();
            if se > 0.0 {
                d / se
            } else if d == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max);
    let rel = (&c - cov).norm() / cov.norm();
    (max_z, rel, max_z < z_limit, rel < cov_limit)
}

struct Run {
    x: Vec<usize>,
    y: Vec<usize>,
    /// Flat indices (in the full video) of the compared pixels.
    query: Vec<usize>,
    /// Positions of the same pixels in the stage output.
    stage_idx: Vec<usize>,
}

impl Run {
    fn new(x: Vec<usize>, y: Vec<usize>, m: &PixelMask, shape: crate::data::VideoShape) -> Self {
        let (mut query, mut stage_idx) = (vec![], vec![]);
        for (slot, &f) in x.iter().enumerate() {
            for c in 0..shape.channels {
                for q in 0..shape.pixels() {
                    if m.frame(f)[q] == 0 {
                        query.push(f * shape.frame_len() + c * shape.pixels() + q);
                        stage_idx.push(slot * shape.frame_len() + c * shape.pixels() + q);
                    }
                }
            }
        }
        Self { x, y, query, stage_idx }
    }

    fn draws(
        &self,
        oracle: &GaussianOracle,
        v: &Video,
        m: &PixelMask,
        cfg: &OracleCheckConfig,
        stream: u64,
    ) -> Result<Vec<Vec<f64>>> {
        let one = |i: usize| -> Result<Vec<f64>> {
            let sc = SamplerConfig {
                seed: rng::child_seed(rng::child_seed(cfg.sampler.seed, stream), i as u64),
                ..cfg.sampler.clone()
            };
            let out = sample_stage(oracle, v, m, &self.x, &self.y, &sc)?;
            Ok(self.stage_idx.iter().map(|&j| out.data()[j]).collect())
        };
        let threads = cfg.threads.max(1);
        if threads == 1 {
            return (0..cfg.samples).map(one).collect();
        }
        let chunk = cfg.samples.div_ceil(threads);
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads)
                .map(|t| {
                    let one = &one;
                    scope.spawn(move || {
                        (t * chunk..((t + 1) * chunk).min(cfg.samples))
                            .map(one)
                            .collect::<Result<Vec<_>>>()
                    })
                })
                .collect();
            let mut all = Vec::with_capacity(cfg.samples);
            for h in handles {
                all.extend(h.join().expect("oracle-check worker panicked")?);
            }
            Ok(all)
        })
    }
}

/// Runs both the direct and the marginal check.
pub fn oracle_check(cfg: &OracleCheckConfig) -> Result<OracleReport> {
    let g = &cfg.gp;
    if g.frames < 4 {
        return Err(Error::param("sampler", "oracle check needs at least 4 frames"));
    }
    if cfg.samples < 2 {
        return Err(Error::param("sampler", "oracle check needs at least 2 samples"));
    }
    cfg.sampler.check()?;
    let ds = GpDataset::new(g.clone())?;
    let shape = g.shape();
    let v = ds.sample(cfg.video_index);
    let m = oracle_mask(g.frames, g.height, g.width);
    let observed: Vec<usize> = (0..shape.len())
        .filter(|&i| m.frame(i / shape.frame_len())[i % shape.pixels()] == 1)
        .collect();
    let values: Vec<f64> = observed.iter().map(|&i| v.data()[i]).collect();
    let oracle = GaussianOracle::new(g)?;
    let n = g.frames;
    let direct = Run::new((1..n - 1).collect(), vec![0, n - 1], &m, shape);
    let marginal = Run::new((1..n - 2).collect(), vec![n - 2, 0, n - 1], &m, shape);
    let mut checks = vec![];
    for (k, run) in [direct, marginal].into_iter().enumerate() {
        let exact = ds.conditional(&observed, &values, &run.query)?;
        let draws = run.draws(&oracle, &v, &m, cfg, k as u64)?;
        let (max_mean_z, cov_rel_error, mean_ok, cov_ok) =
            compare_moments(&draws, &exact.mean, &exact.cov, cfg.mean_z_limit, cfg.cov_rel_limit);
        checks.push(MomentCheck {
            x: run.x,
            y: run.y,
            pixels: run.query.len(),
            max_mean_z,
            cov_rel_error,
            mean_ok,
            cov_ok,
        });
    }
    let marginal = checks.pop().expect("two runs");
    let direct = checks.pop().expect("two runs");
    Ok(OracleReport {
        samples: cfg.samples,
        nfe: cfg.sampler.nfe(),
        passed: direct.mean_ok && direct.cov_ok && marginal.mean_ok && marginal.cov_ok,
        direct,
        marginal,
    })
}
