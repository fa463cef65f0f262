//! Reconstruction and temporal-consistency metrics for videos in [-1, 1].

use serde::{Deserialize, Serialize};

use crate::data::{FlowField, Video};
use crate::error::{Error, Result};
use crate::masks::PixelMask;

/// Peak-to-peak range of the data.
pub const PEAK: f64 = 2.0;
pub const SSIM_WINDOW: usize = 8;

fn same_shape(a: &Video, b: &Video) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::param(
            "metrics",
            format!("shape mismatch: {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

/// Mean squared error, over the mask-0 pixels of `region` when given.
pub fn mse(a: &Video, b: &Video, region: Option<&PixelMask>) -> Result<f64> {
    same_shape(a, b)?;
    let s = a.shape();
    let Some(m) = region else {
        let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
        return Ok(sum / a.data().len() as f64);
    };
    if m.frames() != s.frames || m.height() != s.height || m.width() != s.width {
        return Err(Error::param("metrics", "region mask shape does not match the video"));
    }
    let (mut sum, mut cnt) = (0.0, 0usize);
    for f in 0..s.frames {
        let mf = m.frame(f);
        for c in 0..s.channels {
            for q in 0..s.pixels() {
                if mf[q] == 0 {
                    let (y, x) = (q / s.width, q % s.width);
                    let d = a.get(f, c, y, x) - b.get(f, c, y, x);
                    sum += d * d;
                    cnt += 1;
                }
            }
        }
    }
    if cnt == 0 {
        return Err(Error::param("metrics", "region contains no missing pixels"));
    }
    Ok(sum / cnt as f64)
}

/// `10·log₁₀(PEAK²/MSE)`; `f64::INFINITY` when the inputs agree exactly.
pub fn psnr(a: &Video, b: &Video, region: Option<&PixelMask>) -> Result<f64> {
    let e = mse(a, b, region)?;
    Ok(if e == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (PEAK * PEAK / e).log10()
    })
}

/// Window sums of one `h×w` plane via a summed-area table.
struct Integral {
    w1: usize,
    t: Vec<f64>,
}

impl Integral {
    fn new(plane: impl Fn(usize, usize) -> f64, h: usize, w: usize) -> Self {
        let w1 = w + 1;
        let mut t = vec![0.0; (h + 1) * w1];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += plane(y, x);
                t[(y + 1) * w1 + x + 1] = t[y * w1 + x + 1] + row;
            }
        }
        Self { w1, t }
    }

    fn window(&self, y: usize, x: usize, k: usize) -> f64 {
        let w1 = self.w1;
        self.t[(y + k) * w1 + x + k] - self.t[y * w1 + x + k] - self.t[(y + k) * w1 + x] + self.t[y * w1 + x]
    }
}

/// Mean SSIM over all 8×8 windows (stride 1), channels and frames, with
/// uniform weights and population moments.
pub fn ssim(a: &Video, b: &Video) -> Result<f64> {
    same_shape(a, b)?;
    let s = a.shape();
    let k = SSIM_WINDOW;
    if s.height < k || s.width < k {
        return Err(Error::param(
            "metrics",
            format!("frames {}x{} smaller than the {k}x{k} window", s.height, s.width),
        ));
    }
    let c1 = (0.01 * PEAK).powi(2);
    let c2 = (0.03 * PEAK).powi(2);
    let npx = (k * k) as f64;
    let (mut total, mut count) = (0.0, 0usize);
    for f in 0..s.frames {
        for c in 0..s.channels {
            let pa = |y: usize, x: usize| a.get(f, c, y, x);
            let pb = |y: usize, x: usize| b.get(f, c, y, x);
            let sa = Integral::new(pa, s.height, s.width);
            let sb = Integral::new(pb, s.height, s.width);
            let saa = Integral::new(|y, x| pa(y, x) * pa(y, x), s.height, s.width);
            let sbb = Integral::new(|y, x| pb(y, x) * pb(y, x), s.height, s.width);
            let sab = Integral::new(|y, x| pa(y, x) * pb(y, x), s.height, s.width);
            for y in 0..=s.height - k {
                for x in 0..=s.width - k {
                    let ma = sa.window(y, x, k) / npx;
                    let mb = sb.window(y, x, k) / npx;
                    let va = saa.window(y, x, k) / npx - ma * ma;
                    let vb = sbb.window(y, x, k) / npx - mb * mb;
                    let cov = sab.window(y, x, k) / npx - ma * mb;
                    total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    count += 1;
                }
            }
        }
    }
    Ok(total / count as f64)
}

/// Mean `|v_k(q - flow_k(q)) - v_{k+1}(q)|` over pixels with a valid flow
/// whose source lies inside the frame, averaged over channels. Flows are
/// rounded to the nearest integer displacement.
pub fn warp_error(v: &Video, flow: &FlowField) -> Result<f64> {
    let s = v.shape();
    if flow.pairs + 1 != s.frames || flow.height != s.height || flow.width != s.width {
        return Err(Error::param(
            "metrics",
            format!(
                "flow ({}, 2, {}, {}) does not fit video of {} frames {}x{}",
                flow.pairs, flow.height, flow.width, s.frames, s.height, s.width
            ),
        ));
    }
    let (mut sum, mut cnt) = (0.0, 0usize);
    for k in 0..flow.pairs {
        for y in 0..s.height {
            for x in 0..s.width {
                let Some((dx, dy)) = flow.displacement(k, y, x) else {
                    continue;
                };
                let sx = x as i64 - dx.round() as i64;
                let sy = y as i64 - dy.round() as i64;
                if sx < 0 || sy < 0 || sx >= s.width as i64 || sy >= s.height as i64 {
                    continue;
                }
                for c in 0..s.channels {
                    sum += (v.get(k, c, sy as usize, sx as usize) - v.get(k + 1, c, y, x)).abs();
                    cnt += 1;
                }
            }
        }
    }
    Ok(if cnt == 0 { 0.0 } else { sum / cnt as f64 })
}

/// One row of an evaluation table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct MetricRow {
    pub name: String,
    /// `null` encodes +∞ (identical inputs).
    pub psnr: Option<f64>,
    pub psnr_missing: Option<f64>,
    pub ssim: Option<f64>,
    pub mse_missing: Option<f64>,
    pub warp_error: Option<f64>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Full-frame and missing-region scores of `pred` against `truth`.
pub fn evaluate(
    name: &str,
    truth: &Video,
    pred: &Video,
    mask: Option<&PixelMask>,
    flow: Option<&FlowField>,
) -> Result<MetricRow> {
    let s = truth.shape();
    let has_missing = mask.is_some_and(|m| m.missing_count() > 0);
    let region = mask.filter(|_| has_missing);
    Ok(MetricRow {
        name: name.to_string(),
        psnr: finite(psnr(truth, pred, None)?),
        psnr_missing: match region {
            Some(m) => finite(psnr(truth, pred, Some(m))?),
            None => None,
        },
        ssim: if s.height >= SSIM_WINDOW && s.width >= SSIM_WINDOW {
            Some(ssim(truth, pred)?)
        } else {
            None
        },
        mse_missing: match region {
            Some(m) => Some(mse(truth, pred, Some(m))?),
            None => None,
        },
        warp_error: match flow {
            Some(fl) => Some(warp_error(pred, fl)?),
            None => None,
        },
    })
}
