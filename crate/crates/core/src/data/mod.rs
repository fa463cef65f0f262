//! Videos, synthetic datasets and the on-disk tensor format.

pub mod gp;
pub mod sprites;
pub mod tensor_file;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use gp::{GpDataset, GpVideoSpec};
pub use sprites::{FlowField, SpriteDataset, SpriteShape, SpriteWorld};
pub use tensor_file::Tensor;

/// `(frames, channels, height, width)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, schemars::JsonSchema)]
pub struct VideoShape {
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl VideoShape {
    pub fn new(frames: usize, channels: usize, height: usize, width: usize) -> Self {
        Self {
            frames,
            channels,
            height,
            width,
        }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.frames * self.frame_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A real-valued `(N, C, H, W)` video stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Video {
    shape: VideoShape,
    data: Vec<f64>,
}

impl Video {
    pub fn zeros(shape: VideoShape) -> Self {
        Self {
            data: vec![0.0; shape.len()],
            shape,
        }
    }

    pub fn from_vec(shape: VideoShape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::param(
                "data",
                format!("{} values do not fill shape {:?}", data.len(), shape),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> VideoShape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn frame(&self, n: usize) -> &[f64] {
        let len = self.shape.frame_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn frame_mut(&mut self, n: usize) -> &mut [f64] {
        let len = self.shape.frame_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let s = &self.shape;
        ((n * s.channels + c) * s.height + y) * s.width + x
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: f64) {
        let i = self.index(n, c, y, x);
        self.data[i] = v;
    }

    /// Copies the listed frames, in the listed order, into a new video.
    pub fn select_frames(&self, frames: &[usize]) -> Result<Video> {
        let mut shape = self.shape;
        shape.frames = frames.len();
        let mut data = Vec::with_capacity(shape.len());
        for &f in frames {
            if f >= self.shape.frames {
                return Err(Error::index(
                    "data",
                    format!("frame {f} out of range for {} frames", self.shape.frames),
                ));
            }
            data.extend_from_slice(self.frame(f));
        }
        Ok(Video { shape, data })
    }

    /// Writes frame `i` of `src` to frame `frames[i]` of `self`.
    pub fn write_frames(&mut self, frames: &[usize], src: &Video) -> Result<()> {
        if src.shape.frame_len() != self.shape.frame_len() || src.shape.frames < frames.len() {
            return Err(Error::param("data", "frame shapes do not match"));
        }
        for (i, &f) in frames.iter().enumerate() {
            if f >= self.shape.frames {
                return Err(Error::index("data", format!("frame {f} out of range")));
            }
            self.frame_mut(f).copy_from_slice(src.frame(i));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn clamp(&mut self, lo: f64, hi: f64) {
        for v in &mut self.data {
            *v = v.clamp(lo, hi);
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        let s = self.shape;
        Tensor::new(
            vec![s.frames, s.channels, s.height, s.width],
            self.data.iter().map(|&v| v as f32).collect(),
        )
        .expect("shape and data agree")
    }

    /// Accepts rank-4 `(N, C, H, W)` or rank-3 `(N, H, W)` (single channel).
    pub fn from_tensor(t: &Tensor) -> Result<Video> {
        let shape = match t.dims() {
            &[n, c, h, w] => VideoShape::new(n, c, h, w),
            &[n, h, w] => VideoShape::new(n, 1, h, w),
            d => {
                return Err(Error::param(
                    "data",
                    format!("expected a rank-3 or rank-4 video tensor, got dims {d:?}"),
                ))
            }
        };
        Video::from_vec(shape, t.data().iter().map(|&v| v as f64).collect())
    }
}
