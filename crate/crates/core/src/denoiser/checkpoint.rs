//! Checkpoint files.
//!
//! ```text
//! magic "VIDNCKPT" | u32 version | u64 header length | JSON header
//! | f32 θ | f32 EMA θ | (f32 Adam m | f32 Adam v, if present)
//! ```
//! All integers and floats are little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{DenoiserParams, NetArch, ParamEntry};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"VIDNCKPT";
const VERSION: u32 = 1;

/// AdamW moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Number of updates applied so far.
    pub t: u64,
}

impl OptimizerState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: DenoiserParams,
    /// Training steps completed.
    pub step: usize,
    pub optimizer: Option<OptimizerState>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    arch: NetArch,
    layout: Vec<ParamEntry>,
    n_params: usize,
    step: usize,
    adam_t: Option<u64>,
}

fn push_f32(out: &mut Vec<u8>, v: &[f64]) {
    for &x in v {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let header = Header {
            arch: self.params.arch.clone(),
            layout: self.params.layout(),
            n_params: self.params.len(),
            step: self.step,
            adam_t: self.optimizer.as_ref().map(|o| o.t),
        };
        let json = serde_json::to_vec(&header).expect("header serialises");
        let mut out = Vec::with_capacity(24 + json.len() + 16 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        push_f32(&mut out, &self.params.theta);
        push_f32(&mut out, &self.params.ema);
        if let Some(o) = &self.optimizer {
            push_f32(&mut out, &o.m);
            push_f32(&mut out, &o.v);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| bad(format!("header: {e}")))?;
        header.arch.check()?;
        let expected = DenoiserParams {
            arch: header.arch.clone(),
            theta: vec![],
            ema: vec![],
        }
        .layout();
        if expected != header.layout {
            return Err(bad("layout descriptor does not match the architecture"));
        }
        let n = header.n_params;
        if expected.iter().map(ParamEntry::len).sum::<usize>() != n {
            return Err(bad("parameter count does not match the layout"));
        }
        let blobs = if header.adam_t.is_some() { 4 } else { 2 };
        let payload = &bytes[20 + hlen..];
        if payload.len() != blobs * n * 4 {
            return Err(bad(format!(
                "payload is {} bytes, expected {}",
                payload.len(),
                blobs * n * 4
            )));
        }
        let mut it = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64);
        let mut take = || -> Vec<f64> { it.by_ref().take(n).collect() };
        let theta = take();
        let ema = take();
        let optimizer = header.adam_t.map(|t| OptimizerState { m: take(), v: take(), t });
        let params = DenoiserParams {
            arch: header.arch,
            theta,
            ema,
        };
        if !params.is_finite() {
            return Err(bad("non-finite parameter values"));
        }
        Ok(Self {
            params,
            step: header.step,
            optimizer,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}
