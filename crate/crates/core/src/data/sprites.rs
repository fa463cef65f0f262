//! Moving-sprites videos with exact ground-truth flow.
//!
//! Sprites are squares or discs moving with integral per-frame velocities and
//! bouncing off the frame border, so the displacement between consecutive
//! frames is known exactly for every pixel.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Tensor, Video, VideoShape};
use crate::error::{Error, Result};
use crate::masks::reflect;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum SpriteShape {
    Square,
    Disc,
}

impl SpriteShape {
    fn covers(self, size: usize, dy: usize, dx: usize) -> bool {
        match self {
            SpriteShape::Square => dy < size && dx < size,
            SpriteShape::Disc => {
                if dy >= size || dx >= size {
                    return false;
                }
                let r = size as f64 / 2.0;
                let cy = dy as f64 + 0.5 - r;
                let cx = dx as f64 + 0.5 - r;
                cy * cy + cx * cx <= r * r
            }
        }
    }
}

/// One rigid sprite. Positions are the top-left corner at frame 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct Sprite {
    pub shape: SpriteShape,
    pub size: usize,
    pub x0: i64,
    pub y0: i64,
    /// Pixels per frame along x (columns).
    pub vx: i64,
    /// Pixels per frame along y (rows).
    pub vy: i64,
    /// One value per channel.
    pub intensity: Vec<f64>,
}

impl Sprite {
    /// Top-left corner `(x, y)` at `frame`, bouncing inside a `w × h` frame.
    pub fn position(&self, frame: usize, h: usize, w: usize) -> (i64, i64) {
        let k = frame as i64;
        let x = reflect(self.x0 + self.vx * k, 0, (w - self.size) as i64);
        let y = reflect(self.y0 + self.vy * k, 0, (h - self.size) as i64);
        (x, y)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SpriteWorld {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    #[serde(default = "one")]
    pub channels: usize,
    /// Inclusive range of sprite counts per video.
    pub sprites: (usize, usize),
    /// Inclusive range of sprite sizes in pixels.
    pub size: (usize, usize),
    /// Velocity components are drawn uniformly from `-max_speed..=max_speed`.
    pub max_speed: i64,
    #[serde(default = "all_shapes")]
    pub shapes: Vec<SpriteShape>,
    /// Range of the constant background level.
    pub background: (f64, f64),
    /// Range of sprite intensities.
    pub intensity: (f64, f64),
    pub seed: u64,
}

fn one() -> usize {
    1
}

fn all_shapes() -> Vec<SpriteShape> {
    vec![SpriteShape::Square, SpriteShape::Disc]
}

impl SpriteWorld {
    /// 16×16 single-channel, 32 frames.
    pub fn desk(seed: u64) -> Self {
        Self {
            frames: 32,
            height: 16,
            width: 16,
            channels: 1,
            sprites: (1, 2),
            size: (3, 6),
            max_speed: 1,
            shapes: all_shapes(),
            background: (-0.8, -0.4),
            intensity: (0.2, 1.0),
            seed,
        }
    }

    pub fn shape(&self) -> VideoShape {
        VideoShape::new(self.frames, self.channels, self.height, self.width)
    }

    fn check(&self) -> Result<()> {
        if self.frames == 0 || self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(Error::param("data", "sprite world dimensions must be positive"));
        }
        if self.size.0 == 0 || self.size.0 > self.size.1 || self.sprites.0 > self.sprites.1 {
            return Err(Error::param("data", "sprite size/count ranges must be non-empty"));
        }
        if self.size.1 > self.height.min(self.width) {
            return Err(Error::param(
                "data",
                format!(
                    "sprite size {} larger than frame {}x{}",
                    self.size.1, self.height, self.width
                ),
            ));
        }
        if self.shapes.is_empty() {
            return Err(Error::param("data", "no sprite shapes allowed"));
        }
        Ok(())
    }

    /// Draws the sprites of video `index`.
    pub fn draw_sprites(&self, index: usize) -> Result<(f64, Vec<Sprite>)> {
        self.check()?;
        let mut rng = rng::stream(self.seed, index as u64);
        let background = rng.random_range(self.background.0..=self.background.1);
        let count = rng.random_range(self.sprites.0..=self.sprites.1);
        let sprites = (0..count)
            .map(|_| {
                let size = rng.random_range(self.size.0..=self.size.1);
                let shape = self.shapes[rng.random_range(0..self.shapes.len())];
                Sprite {
                    shape,
                    size,
                    x0: rng.random_range(0..=(self.width - size) as i64),
                    y0: rng.random_range(0..=(self.height - size) as i64),
                    vx: rng.random_range(-self.max_speed..=self.max_speed),
                    vy: rng.random_range(-self.max_speed..=self.max_speed),
                    intensity: (0..self.channels)
                        .map(|_| rng.random_range(self.intensity.0..=self.intensity.1))
                        .collect(),
                }
            })
            .collect();
        Ok((background, sprites))
    }
}

/// Backward flow between consecutive frames, shape `(N-1, 2, H, W)`.
///
/// Entry `k` lives on the pixel grid of frame `k+1`: channel 0 is the x
/// displacement and channel 1 the y displacement such that
/// `v[k+1](q) = v[k](q - flow(q))`. Pixels that are disoccluded between the
/// two frames carry NaN in both channels.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub pairs: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FlowField {
    #[inline]
    pub fn index(&self, k: usize, ch: usize, y: usize, x: usize) -> usize {
        ((k * 2 + ch) * self.height + y) * self.width + x
    }

    /// `(dx, dy)` or `None` when occluded.
    pub fn displacement(&self, k: usize, y: usize, x: usize) -> Option<(f64, f64)> {
        let dx = self.data[self.index(k, 0, y, x)];
        let dy = self.data[self.index(k, 1, y, x)];
        (dx.is_finite() && dy.is_finite()).then_some((dx, dy))
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.pairs, 2, self.height, self.width],
            self.data.iter().map(|&v| v as f32).collect(),
        )
        .expect("flow shape")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match t.dims() {
            &[pairs, 2, height, width] => Ok(Self {
                pairs,
                height,
                width,
                data: t.data().iter().map(|&v| v as f64).collect(),
            }),
            d => Err(Error::param(
                "data",
                format!("flow tensor must be (N-1, 2, H, W), got {d:?}"),
            )),
        }
    }
}

/// Rasterises sprites over a constant background and derives the exact flow.
pub fn render(shape: VideoShape, background: f64, sprites: &[Sprite]) -> Result<(Video, FlowField)> {
    let (n, h, w) = (shape.frames, shape.height, shape.width);
    for s in sprites {
        if s.size == 0 || s.size > h || s.size > w {
            return Err(Error::param(
                "data",
                format!("sprite of size {} does not fit a {h}x{w} frame", s.size),
            ));
        }
        if s.intensity.len() != shape.channels {
            return Err(Error::param("data", "sprite intensity needs one value per channel"));
        }
    }
    // layer[k][y*w+x] = index of the topmost sprite, -1 for background
    let mut layers = vec![vec![-1i64; h * w]; n];
    let mut positions = vec![Vec::with_capacity(sprites.len()); n];
    for (k, layer) in layers.iter_mut().enumerate() {
        for (j, s) in sprites.iter().enumerate() {
            let (px, py) = s.position(k, h, w);
            positions[k].push((px, py));
            for dy in 0..s.size {
                for dx in 0..s.size {
                    if s.shape.covers(s.size, dy, dx) {
                        let y = py as usize + dy;
                        let x = px as usize + dx;
                        layer[y * w + x] = j as i64;
                    }
                }
            }
        }
    }

    let mut video = Video::zeros(shape);
    for k in 0..n {
        for c in 0..shape.channels {
            for y in 0..h {
                for x in 0..w {
                    let l = layers[k][y * w + x];
                    let v = if l < 0 {
                        background
                    } else {
                        sprites[l as usize].intensity[c]
                    };
                    video.set(k, c, y, x, v);
                }
            }
        }
    }

    let pairs = n.saturating_sub(1);
    let mut flow = FlowField {
        pairs,
        height: h,
        width: w,
        data: vec![0.0; pairs * 2 * h * w],
    };
    for k in 0..pairs {
        for y in 0..h {
            for x in 0..w {
                let l = layers[k + 1][y * w + x];
                let (dx, dy) = if l < 0 {
                    (0, 0)
                } else {
                    let (x1, y1) = positions[k + 1][l as usize];
                    let (x0, y0) = positions[k][l as usize];
                    (x1 - x0, y1 - y0)
                };
                let sx = x as i64 - dx;
                let sy = y as i64 - dy;
                let valid = sx >= 0
                    && sy >= 0
                    && (sx as usize) < w
                    && (sy as usize) < h
                    && layers[k][sy as usize * w + sx as usize] == l;
                let (fx, fy) = if valid {
                    (dx as f64, dy as f64)
                } else {
                    (f64::NAN, f64::NAN)
                };
                let ix = flow.index(k, 0, y, x);
                let iy = flow.index(k, 1, y, x);
                flow.data[ix] = fx;
                flow.data[iy] = fy;
            }
        }
    }
    Ok((video, flow))
}

#[derive(Clone, Debug)]
pub struct SpriteDataset {
    pub videos: Vec<Video>,
    pub flows: Vec<FlowField>,
    pub sprites: Vec<Vec<Sprite>>,
}

/// Generates `n_videos` videos; video `i` depends only on `(spec.seed, i)`.
pub fn gen_sprites(spec: &SpriteWorld, n_videos: usize) -> Result<SpriteDataset> {
    gen_sprites_range(spec, 0..n_videos)
}

pub fn gen_sprites_range(spec: &SpriteWorld, indices: std::ops::Range<usize>) -> Result<SpriteDataset> {
    let mut out = SpriteDataset {
        videos: Vec::new(),
        flows: Vec::new(),
        sprites: Vec::new(),
    };
    for i in indices {
        let (bg, sprites) = spec.draw_sprites(i)?;
        let (v, f) = render(spec.shape(), bg, &sprites)?;
        out.videos.push(v);
        out.flows.push(f);
        out.sprites.push(sprites);
    }
    Ok(out)
}
