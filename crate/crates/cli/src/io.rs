//! File helpers: tensor stacks, config parsing and hashing.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::de::DeserializeOwned;
use sha2::{Digest, Sha256};
use vidinpaint_core::data::{FlowField, Tensor};
use vidinpaint_core::{PixelMask, SamplingScheme, Video};

use crate::error::CliError;

/// Parses a JSON config, reporting the failing field path on mismatch.
pub fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).with_context(|| format!("io: reading {}", path.display()))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let (mut field, mut msg) = (e.path().to_string(), e.inner().to_string());
        // tagged enums report the path inside the variant in the message
        if let Some((inner, rest)) = msg.strip_prefix("at `").and_then(|m| m.split_once("`: ")) {
            field = if field == "." { inner.to_string() } else { format!("{field}.{inner}") };
            msg = rest.to_string();
        }
        CliError::Schema {
            file: path.display().to_string(),
            path: field,
            msg,
        }
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: &Path) -> anyhow::Result<String> {
    Ok(sha256_hex(&fs::read(path).with_context(|| format!("io: reading {}", path.display()))?))
}

/// Hash of the stage list, identifying a plan independently of formatting.
pub fn stages_sha256(scheme: &SamplingScheme) -> String {
    sha256_hex(&serde_json::to_vec(&scheme.stages).expect("stages serialise"))
}

/// Output location: absolute paths are kept, relative ones go under `dir`.
pub fn out_path(dir: &Path, p: &Path) -> anyhow::Result<PathBuf> {
    let full = if p.is_absolute() { p.to_path_buf() } else { dir.join(p) };
    if let Some(parent) = full.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).with_context(|| format!("io: creating {}", parent.display()))?;
        }
    }
    Ok(full)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    fs::write(path, bytes).with_context(|| format!("io: writing {}", path.display()))
}

fn load(path: &Path) -> anyhow::Result<Tensor> {
    Tensor::load(path).with_context(|| format!("reading {}", path.display()))
}

/// Splits the leading axis of a rank-`r+1` tensor into rank-`r` tensors.
fn unstack(t: &Tensor) -> anyhow::Result<Vec<Tensor>> {
    let (&n, inner) = t.dims().split_first().ok_or_else(|| anyhow!("data: empty tensor dims"))?;
    let len: usize = inner.iter().product();
    (0..n)
        .map(|i| Ok(Tensor::new(inner.to_vec(), t.data()[i * len..(i + 1) * len].to_vec())?))
        .collect()
}

fn stack(items: &[Tensor]) -> anyhow::Result<Tensor> {
    let first = items.first().ok_or_else(|| anyhow!("data: nothing to write"))?;
    let mut dims = vec![items.len()];
    dims.extend_from_slice(first.dims());
    let data = items.iter().flat_map(|t| t.data().iter().copied()).collect();
    Ok(Tensor::new(dims, data)?)
}

/// A file of one or more videos. `batched` records whether the file had a
/// leading video axis, so outputs can mirror the input layout.
pub struct Videos {
    pub videos: Vec<Video>,
    pub batched: bool,
}

/// Reads `(V, N, C, H, W)` or a single `(N, C, H, W)` video.
pub fn load_videos(path: &Path) -> anyhow::Result<Videos> {
    let t = load(path)?;
    if t.dims().len() == 5 {
        let videos = unstack(&t)?.iter().map(Video::from_tensor).collect::<Result<_, _>>()?;
        Ok(Videos { videos, batched: true })
    } else {
        Ok(Videos {
            videos: vec![Video::from_tensor(&t)?],
            batched: false,
        })
    }
}

pub fn save_videos(path: &Path, videos: &[Video], batched: bool) -> anyhow::Result<()> {
    let t = if batched || videos.len() != 1 {
        stack(&videos.iter().map(Video::to_tensor).collect::<Vec<_>>())?
    } else {
        videos[0].to_tensor()
    };
    t.save(path).with_context(|| format!("writing {}", path.display()))
}

/// Reads `(V, N, H, W)` or a single `(N, H, W)` mask.
pub fn load_masks(path: &Path) -> anyhow::Result<Vec<PixelMask>> {
    let t = load(path)?;
    if t.dims().len() == 4 {
        Ok(unstack(&t)?.iter().map(PixelMask::from_tensor).collect::<Result<_, _>>()?)
    } else {
        Ok(vec![PixelMask::from_tensor(&t)?])
    }
}

pub fn save_masks(path: &Path, masks: &[PixelMask]) -> anyhow::Result<()> {
    stack(&masks.iter().map(PixelMask::to_tensor).collect::<Vec<_>>())?
        .save(path)
        .with_context(|| format!("writing {}", path.display()))
}

/// Reads `(V, N-1, 2, H, W)` or a single `(N-1, 2, H, W)` flow.
pub fn load_flows(path: &Path) -> anyhow::Result<Vec<FlowField>> {
    let t = load(path)?;
    if t.dims().len() == 5 {
        Ok(unstack(&t)?.iter().map(FlowField::from_tensor).collect::<Result<_, _>>()?)
    } else {
        Ok(vec![FlowField::from_tensor(&t)?])
    }
}

pub fn save_flows(path: &Path, flows: &[FlowField]) -> anyhow::Result<()> {
    stack(&flows.iter().map(FlowField::to_tensor).collect::<Vec<_>>())?
        .save(path)
        .with_context(|| format!("writing {}", path.display()))
}

/// Picks item `i`, broadcasting a single entry over every video.
pub fn broadcast<'a, T>(items: &'a [T], i: usize, what: &str, n: usize) -> anyhow::Result<&'a T> {
    match items.len() {
        1 => Ok(&items[0]),
        len if len == n => Ok(&items[i]),
        len => Err(anyhow!("io: {len} {what} for {n} videos")),
    }
}
