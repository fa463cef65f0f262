//! Bayes-optimal ε-predictor for Gaussian-process videos.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{Denoiser, DenoiserInput};
use crate::data::{GpVideoSpec, Video};
use crate::data::gp::{GpKernel, Site};
use crate::error::Result;
use crate::schedule::sigma_to_alpha_bar;

/// Conditional law of the missing pixels given the observed ones, held in
/// eigen-form so every noise level costs two matrix-vector products.
struct Posterior {
    missing: Vec<usize>,
    mean: DVector<f64>,
    vecs: DMatrix<f64>,
    vals: DVector<f64>,
}

/// Exact denoiser for data drawn from a [`GpVideoSpec`].
///
/// For `x̂ = x + σ ε` with `x | y ~ N(μ_c, C)`, the optimal prediction is
/// `ε* = (x̂ - m)/σ = V diag(σ/(λ+σ²)) Vᵀ (x̂ - μ_c)` with `C = V diag(λ) Vᵀ`.
/// Observed pixels (mask 1) receive a prediction of 0.
pub struct GaussianOracle {
    kernel: GpKernel,
    max_frames: usize,
    cache: Mutex<HashMap<Vec<u64>, Arc<Posterior>>>,
}

const CACHE_LIMIT: usize = 256;

impl GaussianOracle {
    pub fn new(spec: &GpVideoSpec) -> Result<Self> {
        spec.check()?;
        Ok(Self {
            kernel: spec.kernel(),
            max_frames: usize::MAX,
            cache: Mutex::new(HashMap::new()),
        })
    }

    /// Rejects calls with more than `k` frames, like a trained network would.
    pub fn with_budget(mut self, k: usize) -> Self {
        self.max_frames = k;
        self
    }

    fn sites(input: &DenoiserInput<'_>) -> (Vec<Site>, Vec<usize>, Vec<Site>, Vec<usize>) {
        let s = input.frames.shape();
        let (mut obs, mut obs_idx, mut miss, mut miss_idx) = (vec![], vec![], vec![], vec![]);
        for f in 0..s.frames {
            let m = input.mask.frame(f);
            for channel in 0..s.channels {
                for y in 0..s.height {
                    for x in 0..s.width {
                        let site = Site {
                            frame: input.positions[f] as i64,
                            channel,
                            y,
                            x,
                        };
                        let i = input.frames.index(f, channel, y, x);
                        if m[y * s.width + x] == 1 {
                            obs.push(site);
                            obs_idx.push(i);
                        } else {
                            miss.push(site);
                            miss_idx.push(i);
                        }
                    }
                }
            }
        }
        (obs, obs_idx, miss, miss_idx)
    }

    fn posterior(&self, input: &DenoiserInput<'_>) -> Result<Arc<Posterior>> {
        let s = input.frames.shape();
        let data = input.frames.data();
        let mut key: Vec<u64> = vec![s.frames as u64, s.channels as u64, s.height as u64, s.width as u64];
        key.extend(input.positions.iter().map(|&p| p as u64));
        key.extend(input.mask.bits().iter().map(|&b| b as u64));
        for f in 0..s.frames {
            let m = input.mask.frame(f);
            for (i, v) in input.frames.frame(f).iter().enumerate() {
                if m[i % s.pixels()] == 1 {
                    key.push(v.to_bits());
                }
            }
        }
        if let Some(p) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(Arc::clone(p));
        }
        let (obs, obs_idx, miss, miss_idx) = Self::sites(input);
        let values: Vec<f64> = obs_idx.iter().map(|&i| data[i]).collect();
        let cond = self.kernel.condition(&obs, &values, &miss)?;
        let eig = SymmetricEigen::new(cond.cov);
        let post = Arc::new(Posterior {
            missing: miss_idx,
            mean: cond.mean,
            vecs: eig.eigenvectors,
            vals: eig.eigenvalues.map(|l| l.max(0.0)),
        });
        let mut cache = self.cache.lock().expect("cache lock");
        if cache.len() >= CACHE_LIMIT {
            cache.clear();
        }
        cache.insert(key, Arc::clone(&post));
        Ok(post)
    }

    /// Exact posterior mean `E[x | x̂, y]` of the missing pixels, in the order
    /// of the frames' storage.
    pub fn posterior_mean(&self, input: &DenoiserInput<'_>) -> Result<Video> {
        input.check(self.max_frames)?;
        let eps = self.predict_eps(input)?;
        let vp = sigma_to_alpha_bar(input.sigma);
        let mut out = input.frames.clone();
        let post = self.posterior(input)?;
        for &i in &post.missing {
            let xhat = input.frames.data()[i] / vp.scale;
            out.data_mut()[i] = xhat - input.sigma * eps.data()[i];
        }
        Ok(out)
    }
}

impl Denoiser for GaussianOracle {
    fn max_frames(&self) -> usize {
        self.max_frames
    }

    fn predict_eps(&self, input: &DenoiserInput<'_>) -> Result<Video> {
        input.check(self.max_frames)?;
        let mut out = Video::zeros(input.frames.shape());
        let sigma = input.sigma;
        if sigma == 0.0 {
            return Ok(out);
        }
        let post = self.posterior(input)?;
        if post.missing.is_empty() {
            return Ok(out);
        }
        let vp = sigma_to_alpha_bar(sigma);
        let data = input.frames.data();
        let resid = DVector::from_iterator(
            post.missing.len(),
            post.missing
                .iter()
                .zip(post.mean.iter())
                .map(|(&i, &mu)| data[i] / vp.scale - mu),
        );
        let mut z = post.vecs.tr_mul(&resid);
        for (zi, &l) in z.iter_mut().zip(post.vals.iter()) {
            *zi *= sigma / (l + sigma * sigma);
        }
        let eps = &post.vecs * z;
        let od = out.data_mut();
        for (&i, &e) in post.missing.iter().zip(eps.iter()) {
            od[i] = e;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::VideoShape;
    use crate::masks::PixelMask;

    /// Two correlated pixels, one observed: closed-form scalar posterior.
    #[test]
    fn two_pixel_closed_form() {
        let spec = GpVideoSpec {
            frames: 2,
            channels: 1,
            height: 1,
            width: 1,
            temporal_coeff: 0.6,
            length_scale: 1.0,
            noise_floor: 0.1,
            mean: 0.2,
            seed: 0,
        };
        let oracle = GaussianOracle::new(&spec).unwrap();
        let k = spec.kernel();
        let site = |f| Site {
            frame: f,
            channel: 0,
            y: 0,
            x: 0,
        };
        let (s00, s01, s11) = (k.cov(&site(0), &site(0)), k.cov(&site(0), &site(1)), k.cov(&site(1), &site(1)));
        let y = 0.9;
        let mu_c = 0.2 + s01 / s00 * (y - 0.2);
        let c = s11 - s01 * s01 / s00;
        for &sigma in &[0.05, 0.5, 3.0, 200.0] {
            let xhat: f64 = -0.4;
            let m = mu_c + c / (c + sigma * sigma) * (xhat - mu_c);
            let want = (xhat - m) / sigma;
            let vp = sigma_to_alpha_bar(sigma);
            let v = Video::from_vec(VideoShape::new(2, 1, 1, 1), vec![y, xhat * vp.scale]).unwrap();
            let mask = PixelMask::from_bits(2, 1, 1, vec![1, 0]).unwrap();
            let out = oracle
                .predict_eps(&DenoiserInput {
                    frames: &v,
                    mask: &mask,
                    positions: &[0, 1],
                    sigma,
                })
                .unwrap();
            assert_eq!(out.data()[0], 0.0);
            assert!((out.data()[1] - want).abs() < 1e-12 * want.abs().max(1.0), "σ={sigma}");
        }
    }

    #[test]
    fn depends_only_on_position_differences() {
        let spec = GpVideoSpec::oracle_default(1);
        let oracle = GaussianOracle::new(&spec).unwrap();
        let v = crate::data::GpDataset::new(spec).unwrap().sample(3).select_frames(&[0, 1, 2]).unwrap();
        let mut mask = PixelMask::ones(3, 2, 2);
        mask.set(1, 0, 1, false);
        mask.set(2, 1, 1, false);
        let run = |pos: &[usize]| {
            oracle
                .predict_eps(&DenoiserInput {
                    frames: &v,
                    mask: &mask,
                    positions: pos,
                    sigma: 0.8,
                })
                .unwrap()
        };
        let a = run(&[0, 1, 4]);
        let b = run(&[10, 11, 14]);
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn budget_enforced() {
        let oracle = GaussianOracle::new(&GpVideoSpec::oracle_default(1)).unwrap().with_budget(2);
        let v = Video::zeros(VideoShape::new(3, 1, 2, 2));
        let m = PixelMask::zeros(3, 2, 2);
        let err = oracle
            .predict_eps(&DenoiserInput {
                frames: &v,
                mask: &m,
                positions: &[0, 1, 2],
                sigma: 1.0,
            })
            .unwrap_err();
        assert!(matches!(err, crate::Error::Capacity { .. }));
    }
}
