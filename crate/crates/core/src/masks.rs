//! Occlusion masks.
//!
//! A [`PixelMask`] holds one bit per `(frame, y, x)`, 1 where the pixel is
//! known, broadcast over channels. [`generate_mask`] produces the four
//! procedural families; all randomness comes from a ChaCha8 generator seeded
//! with the spec seed, stream 0 for shape parameters and stream `k + 1` for
//! per-frame perturbations of frame `k`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Tensor;
use crate::error::{Error, Result};
use crate::rng;

/// Triangle-wave reflection of `p` into `[lo, hi]`.
pub fn reflect(p: i64, lo: i64, hi: i64) -> i64 {
    if hi <= lo {
        return lo;
    }
    let span = hi - lo;
    let r = (p - lo).rem_euclid(2 * span);
    if r <= span {
        lo + r
    } else {
        lo + 2 * span - r
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PixelMask {
    frames: usize,
    height: usize,
    width: usize,
    bits: Vec<u8>,
}

impl PixelMask {
    pub fn ones(frames: usize, height: usize, width: usize) -> Self {
        Self {
            frames,
            height,
            width,
            bits: vec![1; frames * height * width],
        }
    }

    pub fn zeros(frames: usize, height: usize, width: usize) -> Self {
        Self {
            frames,
            height,
            width,
            bits: vec![0; frames * height * width],
        }
    }

    pub fn from_bits(frames: usize, height: usize, width: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != frames * height * width {
            return Err(Error::param("masks", "bit count does not match mask shape"));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::param("masks", "mask values must be 0 or 1"));
        }
        Ok(Self {
            frames,
            height,
            width,
            bits,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn frame(&self, n: usize) -> &[u8] {
        let len = self.height * self.width;
        &self.bits[n * len..(n + 1) * len]
    }

    fn frame_mut(&mut self, n: usize) -> &mut [u8] {
        let len = self.height * self.width;
        &mut self.bits[n * len..(n + 1) * len]
    }

    #[inline]
    pub fn known(&self, n: usize, y: usize, x: usize) -> bool {
        self.bits[(n * self.height + y) * self.width + x] == 1
    }

    pub fn set(&mut self, n: usize, y: usize, x: usize, known: bool) {
        let i = (n * self.height + y) * self.width + x;
        self.bits[i] = known as u8;
    }

    pub fn is_all_ones(&self) -> bool {
        self.bits.iter().all(|&b| b == 1)
    }

    pub fn frame_complete(&self, n: usize) -> bool {
        self.frame(n).iter().all(|&b| b == 1)
    }

    pub fn missing_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 0).count()
    }

    pub fn missing_fraction(&self, n: usize) -> f64 {
        let f = self.frame(n);
        f.iter().filter(|&&b| b == 0).count() as f64 / f.len() as f64
    }

    fn check_frame(&self, f: usize) -> Result<()> {
        if f >= self.frames {
            return Err(Error::index(
                "masks",
                format!("frame {f} out of range for {} frames", self.frames),
            ));
        }
        Ok(())
    }

    pub fn select_frames(&self, frames: &[usize]) -> Result<PixelMask> {
        let mut bits = Vec::with_capacity(frames.len() * self.height * self.width);
        for &f in frames {
            self.check_frame(f)?;
            bits.extend_from_slice(self.frame(f));
        }
        Ok(PixelMask {
            frames: frames.len(),
            height: self.height,
            width: self.width,
            bits,
        })
    }

    /// `M[X] ⊕ 1[Y]`: the mask of the latent frames followed by all-ones
    /// frames for every observed frame.
    pub fn collate(&self, x_idx: &[usize], y_idx: &[usize]) -> Result<PixelMask> {
        for &f in x_idx.iter().chain(y_idx) {
            self.check_frame(f)?;
        }
        let mut seen = vec![false; self.frames];
        for &f in x_idx.iter().chain(y_idx) {
            if std::mem::replace(&mut seen[f], true) {
                return Err(Error::index(
                    "masks",
                    format!("frame {f} listed twice across X and Y"),
                ));
            }
        }
        let mut out = self.select_frames(x_idx)?;
        out.bits.resize((x_idx.len() + y_idx.len()) * self.height * self.width, 1);
        out.frames = x_idx.len() + y_idx.len();
        Ok(out)
    }

    /// Copy with every listed frame set to all-ones.
    pub fn mark_inpainted(&self, frames: &[usize]) -> Result<PixelMask> {
        let mut out = self.clone();
        for &f in frames {
            self.check_frame(f)?;
            out.frame_mut(f).fill(1);
        }
        Ok(out)
    }

    /// Rank-3 `(N, H, W)` tensor of 0.0/1.0.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.frames, self.height, self.width],
            self.bits.iter().map(|&b| b as f32).collect(),
        )
        .expect("mask shape")
    }

    pub fn from_tensor(t: &Tensor) -> Result<PixelMask> {
        let &[n, h, w] = t.dims() else {
            return Err(Error::param(
                "masks",
                format!("mask tensor must be rank 3 (N, H, W), got {:?}", t.dims()),
            ));
        };
        let bits = t
            .data()
            .iter()
            .map(|&v| match v {
                0.0 => Ok(0),
                1.0 => Ok(1),
                _ => Err(Error::param("masks", format!("mask value {v} is not 0 or 1"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        PixelMask::from_bits(n, h, w, bits)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum MaskFamily {
    Grid,
    Lines,
    Box,
    Blob,
}

impl MaskFamily {
    pub const ALL: [MaskFamily; 4] = [MaskFamily::Grid, MaskFamily::Lines, MaskFamily::Box, MaskFamily::Blob];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Motion {
    Stationary,
    Moving,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    Horizontal,
    Vertical,
}

/// Family-specific geometry at frame 0. Offsets and positions are in pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum MaskShape {
    /// Missing `cell × cell` squares repeating every `pitch` pixels.
    Grid { cell: usize, pitch: usize, offset_x: i64, offset_y: i64 },
    /// Missing stripes `thickness` wide repeating every `pitch` pixels.
    Lines {
        orientation: Orientation,
        thickness: usize,
        pitch: usize,
        offset: i64,
    },
    Box { left: i64, top: i64, width: usize, height: usize },
    /// Union of discs; `centers` are `(x, y)` in continuous pixel units and
    /// `jitter` is the per-frame standard deviation of every center.
    Blob {
        centers: Vec<(f64, f64)>,
        radii: Vec<f64>,
        jitter: f64,
    },
}

impl MaskShape {
    pub fn family(&self) -> MaskFamily {
        match self {
            MaskShape::Grid { .. } => MaskFamily::Grid,
            MaskShape::Lines { .. } => MaskFamily::Lines,
            MaskShape::Box { .. } => MaskFamily::Box,
            MaskShape::Blob { .. } => MaskFamily::Blob,
        }
    }
}

fn default_min_frac() -> f64 {
    0.05
}

fn default_max_frac() -> f64 {
    0.6
}

/// Recipe for one mask video. Unset `shape`/`velocity` are drawn from the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct MaskSpec {
    pub family: MaskFamily,
    pub motion: Motion,
    pub seed: u64,
    #[serde(default)]
    pub shape: Option<MaskShape>,
    /// `(vx, vy)` in pixels per frame.
    #[serde(default)]
    pub velocity: Option<(i64, i64)>,
    #[serde(default = "default_min_frac")]
    pub min_frac: f64,
    #[serde(default = "default_max_frac")]
    pub max_frac: f64,
}

impl MaskSpec {
    pub fn new(family: MaskFamily, motion: Motion, seed: u64) -> Self {
        Self {
            family,
            motion,
            seed,
            shape: None,
            velocity: None,
            min_frac: default_min_frac(),
            max_frac: default_max_frac(),
        }
    }

    /// Family and motion drawn uniformly from `seed`.
    pub fn random(seed: u64) -> Self {
        let mut r = rng::stream(seed, u64::MAX);
        let family = MaskFamily::ALL[r.random_range(0..4)];
        let motion = if r.random::<bool>() {
            Motion::Moving
        } else {
            Motion::Stationary
        };
        Self::new(family, motion, seed)
    }
}

/// A spec with every random choice made.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct ResolvedMask {
    pub shape: MaskShape,
    pub velocity: (i64, i64),
}

const MAX_DRAWS: usize = 64;

/// Generates an `n_frames × h × w` mask; deterministic in `spec`.
pub fn generate_mask(spec: &MaskSpec, n_frames: usize, h: usize, w: usize) -> Result<PixelMask> {
    Ok(generate_mask_resolved(spec, n_frames, h, w)?.0)
}

/// As [`generate_mask`], also returning the parameters that were used.
pub fn generate_mask_resolved(
    spec: &MaskSpec,
    n_frames: usize,
    h: usize,
    w: usize,
) -> Result<(PixelMask, ResolvedMask)> {
    if n_frames == 0 || h < 8 || w < 8 {
        return Err(Error::param(
            "masks",
            format!("need n_frames >= 1 and h, w >= 8, got {n_frames}x{h}x{w}"),
        ));
    }
    if !(0.0..=1.0).contains(&spec.min_frac) || spec.min_frac > spec.max_frac || spec.max_frac > 1.0 {
        return Err(Error::param("masks", "need 0 <= min_frac <= max_frac <= 1"));
    }
    if let Some(shape) = &spec.shape {
        if shape.family() != spec.family {
            return Err(Error::param("masks", "shape does not match the mask family"));
        }
    }
    if spec.motion == Motion::Stationary && matches!(spec.velocity, Some(v) if v != (0, 0)) {
        return Err(Error::param("masks", "stationary mask with non-zero velocity"));
    }

    let mut params = rng::stream(spec.seed, 0);
    let random_shape = spec.shape.is_none();
    let random_velocity = spec.velocity.is_none() && spec.motion == Motion::Moving;
    let draws = if random_shape || random_velocity { MAX_DRAWS } else { 1 };
    for _ in 0..draws {
        let shape = match &spec.shape {
            Some(s) => s.clone(),
            None => draw_shape(spec.family, h, w, &mut params),
        };
        let velocity = match (spec.velocity, spec.motion) {
            (Some(v), _) => v,
            (None, Motion::Stationary) => (0, 0),
            (None, Motion::Moving) => draw_velocity(&mut params),
        };
        let resolved = ResolvedMask { shape, velocity };
        let mask = rasterize(&resolved, spec.seed, n_frames, h, w)?;
        let ok = (0..n_frames).all(|k| {
            let f = mask.missing_fraction(k);
            f >= spec.min_frac && f <= spec.max_frac
        });
        if ok {
            return Ok((mask, resolved));
        }
    }
    Err(Error::param(
        "masks",
        format!(
            "missing fraction outside [{}, {}] for {:?} mask after {draws} draw(s)",
            spec.min_frac, spec.max_frac, spec.family
        ),
    ))
}

fn draw_velocity<R: Rng>(r: &mut R) -> (i64, i64) {
    loop {
        let v = (r.random_range(-2..=2), r.random_range(-2..=2));
        if v != (0, 0) {
            return v;
        }
    }
}

fn draw_shape<R: Rng>(family: MaskFamily, h: usize, w: usize, r: &mut R) -> MaskShape {
    let side = h.min(w);
    match family {
        MaskFamily::Grid => {
            let pitch = r.random_range(4..=(side / 2).max(4));
            let lo = ((0.3 * pitch as f64).ceil() as usize).max(1);
            let hi = ((0.7 * pitch as f64).floor() as usize).max(lo);
            let cell = r.random_range(lo..=hi);
            MaskShape::Grid {
                cell,
                pitch,
                offset_x: r.random_range(0..pitch as i64),
                offset_y: r.random_range(0..pitch as i64),
            }
        }
        MaskFamily::Lines => {
            let pitch = r.random_range(3..=(side / 2).max(3));
            let hi = ((0.6 * pitch as f64).floor() as usize).max(1);
            let thickness = r.random_range(1..=hi);
            let orientation = if r.random::<bool>() {
                Orientation::Horizontal
            } else {
                Orientation::Vertical
            };
            MaskShape::Lines {
                orientation,
                thickness,
                pitch,
                offset: r.random_range(0..pitch as i64),
            }
        }
        MaskFamily::Box => {
            let bw = r.random_range((w / 5).max(1)..=(7 * w / 10).max(1));
            let bh = r.random_range((h / 5).max(1)..=(7 * h / 10).max(1));
            MaskShape::Box {
                left: r.random_range(0..=(w - bw) as i64),
                top: r.random_range(0..=(h - bh) as i64),
                width: bw,
                height: bh,
            }
        }
        MaskFamily::Blob => {
            let count = r.random_range(3..=12);
            let s = side as f64;
            let radii: Vec<f64> = (0..count).map(|_| r.random_range(0.05..=0.2) * s).collect();
            let mut centers = Vec::with_capacity(count);
            let mut c = (r.random_range(0.0..w as f64), r.random_range(0.0..h as f64));
            for &rad in &radii {
                centers.push(c);
                let theta = r.random_range(0.0..std::f64::consts::TAU);
                c = (
                    (c.0 + rad * theta.cos()).clamp(0.0, w as f64),
                    (c.1 + rad * theta.sin()).clamp(0.0, h as f64),
                );
            }
            MaskShape::Blob {
                centers,
                radii,
                jitter: 0.03 * s,
            }
        }
    }
}

/// Per-frame displacement range `(lo, hi)` along each axis for bounded
/// shapes, chosen so the shape never leaves the frame.
fn blob_extent(centers: &[(f64, f64)], radii: &[f64]) -> ((f64, f64), (f64, f64)) {
    let mut ex = (f64::INFINITY, f64::NEG_INFINITY);
    let mut ey = ex;
    for (&(cx, cy), &r) in centers.iter().zip(radii) {
        ex = (ex.0.min(cx - r), ex.1.max(cx + r));
        ey = (ey.0.min(cy - r), ey.1.max(cy + r));
    }
    (ex, ey)
}

/// Draws frame `k` of a resolved mask.
///
/// Box and blob masks bounce off the border (reflective motion). Grid and
/// line patterns tile the whole plane, so they translate freely.
pub fn rasterize(m: &ResolvedMask, seed: u64, n_frames: usize, h: usize, w: usize) -> Result<PixelMask> {
    let mut mask = PixelMask::ones(n_frames, h, w);
    let (vx, vy) = m.velocity;
    for k in 0..n_frames {
        let kk = k as i64;
        match &m.shape {
            MaskShape::Grid {
                cell,
                pitch,
                offset_x,
                offset_y,
            } => {
                if *pitch == 0 {
                    return Err(Error::param("masks", "grid pitch must be positive"));
                }
                let p = *pitch as i64;
                let (ox, oy) = (offset_x + vx * kk, offset_y + vy * kk);
                for y in 0..h {
                    for x in 0..w {
                        let in_x = (x as i64 - ox).rem_euclid(p) < *cell as i64;
                        let in_y = (y as i64 - oy).rem_euclid(p) < *cell as i64;
                        if in_x && in_y {
                            mask.set(k, y, x, false);
                        }
                    }
                }
            }
            MaskShape::Lines {
                orientation,
                thickness,
                pitch,
                offset,
            } => {
                if *pitch == 0 {
                    return Err(Error::param("masks", "line pitch must be positive"));
                }
                let p = *pitch as i64;
                for y in 0..h {
                    for x in 0..w {
                        let coord = match orientation {
                            Orientation::Horizontal => y as i64 - (offset + vy * kk),
                            Orientation::Vertical => x as i64 - (offset + vx * kk),
                        };
                        if coord.rem_euclid(p) < *thickness as i64 {
                            mask.set(k, y, x, false);
                        }
                    }
                }
            }
            MaskShape::Box {
                left,
                top,
                width,
                height,
            } => {
                let bw = *width as i64;
                let bh = *height as i64;
                let dx = reflect(vx * kk, -left, w as i64 - left - bw);
                let dy = reflect(vy * kk, -top, h as i64 - top - bh);
                let (x0, y0) = (left + dx, top + dy);
                for y in y0.max(0)..(y0 + bh).min(h as i64) {
                    for x in x0.max(0)..(x0 + bw).min(w as i64) {
                        mask.set(k, y as usize, x as usize, false);
                    }
                }
            }
            MaskShape::Blob {
                centers,
                radii,
                jitter,
            } => {
                if centers.len() != radii.len() || centers.is_empty() {
                    return Err(Error::param("masks", "blob needs one radius per center"));
                }
                let ((x_lo, x_hi), (y_lo, y_hi)) = blob_extent(centers, radii);
                let range = |lo: f64, hi: f64, size: usize| {
                    let lo_d = (-lo).ceil() as i64;
                    let hi_d = (size as f64 - hi).floor() as i64;
                    if lo_d <= 0 && hi_d >= 0 {
                        (lo_d, hi_d)
                    } else {
                        (0, 0)
                    }
                };
                let (dx_lo, dx_hi) = range(x_lo, x_hi, w);
                let (dy_lo, dy_hi) = range(y_lo, y_hi, h);
                let dx = reflect(vx * kk, dx_lo, dx_hi) as f64;
                let dy = reflect(vy * kk, dy_lo, dy_hi) as f64;
                let mut r = rng::stream(seed, k as u64 + 1);
                let discs: Vec<(f64, f64, f64)> = centers
                    .iter()
                    .zip(radii)
                    .map(|(&(cx, cy), &rad)| {
                        let jx = jitter * rng::box_muller(&mut r);
                        let jy = jitter * rng::box_muller(&mut r);
                        (cx + dx + jx, cy + dy + jy, rad)
                    })
                    .collect();
                for y in 0..h {
                    for x in 0..w {
                        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                        if discs
                            .iter()
                            .any(|&(cx, cy, rad)| (px - cx).powi(2) + (py - cy).powi(2) <= rad * rad)
                        {
                            mask.set(k, y, x, false);
                        }
                    }
                }
            }
        }
    }
    Ok(mask)
}
