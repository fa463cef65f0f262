//! Compact trainable ε-network.
//!
//! Per-frame 3×3 convolutions with noise-conditioned residual blocks, and one
//! temporal self-attention layer that mixes frames at each pixel with a learned
//! bias indexed by the difference of absolute frame positions.
//!
//! Activations are stored channel-major, `(channels, frames·H·W)`, so every
//! convolution is a single im2col followed by one matrix product.

use serde::{Deserialize, Serialize};

use super::{Denoiser, DenoiserInput};
use crate::data::Video;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct NetArch {
    /// Image channels (the mask adds one more input channel).
    #[serde(default = "one")]
    pub channels: usize,
    #[serde(default = "thirty_two")]
    pub width: usize,
    /// Residual blocks; attention follows the first half of them.
    #[serde(default = "two")]
    pub depth: usize,
    #[serde(default = "one")]
    pub heads: usize,
    #[serde(default = "sixteen")]
    pub max_frames: usize,
    /// Relative offsets are clipped to ±this before indexing the bias table.
    #[serde(default = "thirty_two")]
    pub max_rel_distance: usize,
    /// Length of the Fourier noise embedding (even).
    #[serde(default = "sixteen")]
    pub emb_dim: usize,
}

fn one() -> usize {
    1
}
fn two() -> usize {
    2
}
fn sixteen() -> usize {
    16
}
fn thirty_two() -> usize {
    32
}

impl Default for NetArch {
    fn default() -> Self {
        Self {
            channels: 1,
            width: 32,
            depth: 2,
            heads: 1,
            max_frames: 16,
            max_rel_distance: 32,
            emb_dim: 16,
        }
    }
}

impl NetArch {
    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::param("denoiser", m));
        if self.channels == 0 || self.width == 0 || self.depth == 0 || self.heads == 0 || self.max_frames == 0 {
            return bad(format!("architecture sizes must be positive: {self:?}"));
        }
        if !self.width.is_multiple_of(self.heads) {
            return bad(format!("width {} not divisible by {} heads", self.width, self.heads));
        }
        if self.emb_dim == 0 || !self.emb_dim.is_multiple_of(2) {
            return bad(format!("emb_dim must be even and positive, got {}", self.emb_dim));
        }
        Ok(())
    }

    fn attn_after(&self) -> usize {
        (self.depth - 1) / 2
    }

    fn rel_len(&self) -> usize {
        2 * self.max_rel_distance + 1
    }
}

/// One named tensor inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug)]
struct Lin {
    w: usize,
    b: usize,
    rows: usize,
    cols: usize,
}

#[derive(Clone, Copy, Debug)]
struct BlockOff {
    conv1: Lin,
    film: Lin,
    conv2: Lin,
}

#[derive(Clone, Copy, Debug)]
struct AttnOff {
    q: Lin,
    k: Lin,
    v: Lin,
    o: Lin,
    rel: usize,
}

#[derive(Clone, Debug)]
struct Offsets {
    conv_in: Lin,
    blocks: Vec<BlockOff>,
    attn: AttnOff,
    conv_out: Lin,
    total: usize,
}

struct LayoutBuilder {
    entries: Vec<ParamEntry>,
    next: usize,
}

impl LayoutBuilder {
    fn push(&mut self, name: String, shape: Vec<usize>) -> usize {
        let off = self.next;
        self.next += shape.iter().product::<usize>();
        self.entries.push(ParamEntry {
            name,
            shape,
            offset: off,
        });
        off
    }

    fn lin(&mut self, name: &str, rows: usize, cols: usize) -> Lin {
        let w = self.push(format!("{name}.w"), vec![rows, cols]);
        let b = self.push(format!("{name}.b"), vec![rows]);
        Lin { w, b, rows, cols }
    }
}

fn build_layout(a: &NetArch) -> (Offsets, Vec<ParamEntry>) {
    let w = a.width;
    let mut lb = LayoutBuilder {
        entries: Vec::new(),
        next: 0,
    };
    let conv_in = lb.lin("in", w, (a.channels + 1) * 9);
    let mut blocks = Vec::with_capacity(a.depth);
    for i in 0..a.depth {
        blocks.push(BlockOff {
            conv1: lb.lin(&format!("block{i}.conv1"), w, w * 9),
            film: lb.lin(&format!("block{i}.film"), 2 * w, a.emb_dim),
            conv2: lb.lin(&format!("block{i}.conv2"), w, w * 9),
        });
    }
    let attn = AttnOff {
        q: lb.lin("attn.q", w, w),
        k: lb.lin("attn.k", w, w),
        v: lb.lin("attn.v", w, w),
        o: lb.lin("attn.o", w, w),
        rel: lb.push("attn.rel_bias".into(), vec![a.heads, a.rel_len()]),
    };
    let conv_out = lb.lin("out", a.channels, w * 9);
    let total = lb.next;
    (
        Offsets {
            conv_in,
            blocks,
            attn,
            conv_out,
            total,
        },
        lb.entries,
    )
}

/// Trainable weights, their EMA shadow, and the architecture they belong to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiserParams {
    pub arch: NetArch,
    pub theta: Vec<f64>,
    pub ema: Vec<f64>,
}

impl DenoiserParams {
    pub fn layout(&self) -> Vec<ParamEntry> {
        build_layout(&self.arch).1
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// `ema ← rate·ema + (1-rate)·θ`.
    pub fn ema_update(&mut self, rate: f64) {
        debug_assert!((0.0..1.0).contains(&rate));
        for (e, &t) in self.ema.iter_mut().zip(&self.theta) {
            *e = rate * *e + (1.0 - rate) * t;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().chain(&self.ema).all(|v| v.is_finite())
    }

    /// Network evaluating the live weights.
    pub fn network(&self) -> Network {
        Network::new(self.arch.clone(), self.theta.clone()).expect("params match their arch")
    }

    /// Network evaluating the EMA weights.
    pub fn ema_network(&self) -> Network {
        Network::new(self.arch.clone(), self.ema.clone()).expect("params match their arch")
    }
}

/// Number of parameters of `arch`.
pub fn param_count(arch: &NetArch) -> usize {
    build_layout(arch).0.total
}

/// Deterministic initialisation. Convolutions and q/k/v are drawn with
/// variance `1/fan_in`; the attention output projection, noise modulation,
/// relative bias and output convolution start at zero.
pub fn init_params(arch: &NetArch, seed: u64) -> Result<DenoiserParams> {
    arch.check()?;
    let (off, _) = build_layout(arch);
    let mut theta = vec![0.0; off.total];
    let mut rng = rng::stream(seed, 0);
    let mut fill = |lin: Lin, theta: &mut [f64]| {
        let std = 1.0 / (lin.cols as f64).sqrt();
        for v in &mut theta[lin.w..lin.w + lin.rows * lin.cols] {
            *v = std * rng::box_muller(&mut rng);
        }
    };
    fill(off.conv_in, &mut theta);
    for b in &off.blocks {
        fill(b.conv1, &mut theta);
        fill(b.conv2, &mut theta);
    }
    fill(off.attn.q, &mut theta);
    fill(off.attn.k, &mut theta);
    fill(off.attn.v, &mut theta);
    let ema = theta.clone();
    Ok(DenoiserParams {
        arch: arch.clone(),
        theta,
        ema,
    })
}

/// Fourier features of `ln σ / 4` at frequencies `2^k / 4`.
pub fn noise_embedding(sigma: f64, dim: usize) -> Vec<f64> {
    let c = sigma.max(1e-6).ln() / 4.0;
    let mut e = Vec::with_capacity(dim);
    for k in 0..dim / 2 {
        let w = (1u64 << k) as f64 / 4.0;
        e.push((w * c).sin());
        e.push((w * c).cos());
    }
    e
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn silu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v * sigmoid(v)).collect()
}

/// `d ← d · silu'(pre)`.
fn silu_back(pre: &[f64], d: &mut [f64]) {
    for (g, &x) in d.iter_mut().zip(pre) {
        let s = sigmoid(x);
        *g *= s * (1.0 + x * (1.0 - s));
    }
}

/// `c (m×n) = β c + a (m×k) · b (k×n)`, with optional transposes given as
/// (row stride, col stride) pairs.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, beta: f64, c: &mut [f64]) {
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the slices cover the strided extents checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug)]
struct Geom {
    frames: usize,
    h: usize,
    w: usize,
}

impl Geom {
    fn p(&self) -> usize {
        self.h * self.w
    }

    fn n(&self) -> usize {
        self.frames * self.p()
    }
}

fn im2col(x: &[f64], cin: usize, g: Geom) -> Vec<f64> {
    let n = g.n();
    let (h, w) = (g.h as isize, g.w as isize);
    let mut cols = vec![0.0; cin * 9 * n];
    for ci in 0..cin {
        let src = &x[ci * n..(ci + 1) * n];
        for ky in 0..3isize {
            for kx in 0..3isize {
                let row = &mut cols[((ci * 9) + (ky * 3 + kx) as usize) * n..][..n];
                for f in 0..g.frames {
                    let base = f * g.p();
                    for y in 0..h {
                        let sy = y + ky - 1;
                        if sy < 0 || sy >= h {
                            continue;
                        }
                        for xx in 0..w {
                            let sx = xx + kx - 1;
                            if sx < 0 || sx >= w {
                                continue;
                            }
                            row[base + (y * w + xx) as usize] = src[base + (sy * w + sx) as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], cin: usize, g: Geom, dx: &mut [f64]) {
    let n = g.n();
    let (h, w) = (g.h as isize, g.w as isize);
    for ci in 0..cin {
        let dst = &mut dx[ci * n..(ci + 1) * n];
        for ky in 0..3isize {
            for kx in 0..3isize {
                let row = &cols[((ci * 9) + (ky * 3 + kx) as usize) * n..][..n];
                for f in 0..g.frames {
                    let base = f * g.p();
                    for y in 0..h {
                        let sy = y + ky - 1;
                        if sy < 0 || sy >= h {
                            continue;
                        }
                        for xx in 0..w {
                            let sx = xx + kx - 1;
                            if sx < 0 || sx >= w {
                                continue;
                            }
                            dst[base + (sy * w + sx) as usize] += row[base + (y * w + xx) as usize];
                        }
                    }
                }
            }
        }
    }
}

/// `out = W·x + b` with `x` given as `(lin.cols, n)`.
fn affine(theta: &[f64], lin: Lin, x: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; lin.rows * n];
    for (r, row) in out.chunks_mut(n).enumerate() {
        row.fill(theta[lin.b + r]);
    }
    gemm(lin.rows, lin.cols, n, &theta[lin.w..], false, x, false, 1.0, &mut out);
    out
}

/// Accumulates parameter gradients of [`affine`] and returns `dx`.
fn affine_back(theta: &[f64], lin: Lin, x: &[f64], dout: &[f64], n: usize, grad: &mut [f64]) -> Vec<f64> {
    for (r, row) in dout.chunks(n).enumerate() {
        grad[lin.b + r] += row.iter().sum::<f64>();
    }
    gemm(lin.rows, n, lin.cols, dout, false, x, true, 1.0, &mut grad[lin.w..lin.w + lin.rows * lin.cols]);
    let mut dx = vec![0.0; lin.cols * n];
    gemm(lin.cols, lin.rows, n, &theta[lin.w..], true, dout, false, 0.0, &mut dx);
    dx
}

struct BlockTape {
    x: Vec<f64>,
    cols1: Vec<f64>,
    c1: Vec<f64>,
    gamma: Vec<f64>,
    f: Vec<f64>,
    cols2: Vec<f64>,
}

struct AttnTape {
    x: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Softmax weights, `[pixel][head][i][j]`.
    a: Vec<f64>,
    o: Vec<f64>,
    rel_idx: Vec<usize>,
}

/// Intermediate values of one forward pass, consumed by the backward pass.
pub struct Tape {
    geom: Geom,
    emb: Vec<f64>,
    cols_in: Vec<f64>,
    blocks: Vec<BlockTape>,
    attn: Option<AttnTape>,
    pre_out: Vec<f64>,
    cols_out: Vec<f64>,
}

/// Evaluable network: an architecture plus one weight vector.
#[derive(Clone, Debug)]
pub struct Network {
    arch: NetArch,
    off: Offsets,
    weights: Vec<f64>,
}

impl Network {
    pub fn new(arch: NetArch, weights: Vec<f64>) -> Result<Self> {
        arch.check()?;
        let (off, _) = build_layout(&arch);
        if weights.len() != off.total {
            return Err(Error::param(
                "denoiser",
                format!("expected {} weights, got {}", off.total, weights.len()),
            ));
        }
        Ok(Self { arch, off, weights })
    }

    pub fn arch(&self) -> &NetArch {
        &self.arch
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    fn check_input(&self, input: &DenoiserInput<'_>) -> Result<()> {
        input.check(self.arch.max_frames)?;
        let c = input.frames.shape().channels;
        if c != self.arch.channels {
            return Err(Error::param(
                "denoiser",
                format!("network expects {} channels, got {c}", self.arch.channels),
            ));
        }
        Ok(())
    }

    /// Forward pass returning `ε̂` and the tape for [`Network::backward`].
    pub fn forward(&self, input: &DenoiserInput<'_>) -> Result<(Video, Tape)> {
        self.check_input(input)?;
        let shape = input.frames.shape();
        let g = Geom {
            frames: shape.frames,
            h: shape.height,
            w: shape.width,
        };
        let (n, p, c) = (g.n(), g.p(), shape.channels);
        let th = &self.weights;

        // (C+1, n): image channels then the mask
        let mut x0 = vec![0.0; (c + 1) * n];
        for f in 0..g.frames {
            let frame = input.frames.frame(f);
            for ch in 0..c {
                x0[ch * n + f * p..ch * n + (f + 1) * p].copy_from_slice(&frame[ch * p..(ch + 1) * p]);
            }
            for (q, &m) in input.mask.frame(f).iter().enumerate() {
                x0[c * n + f * p + q] = m as f64;
            }
        }
        let emb = noise_embedding(input.sigma, self.arch.emb_dim);
        let cols_in = im2col(&x0, c + 1, g);
        let mut h = affine(th, self.off.conv_in, &cols_in, n);

        let mut blocks = Vec::with_capacity(self.arch.depth);
        let mut attn = None;
        for (i, b) in self.off.blocks.iter().enumerate() {
            let (out, tape) = self.block_forward(*b, h, &emb, g);
            h = out;
            blocks.push(tape);
            if i == self.arch.attn_after() {
                let (out, tape) = self.attn_forward(h, input.positions, g);
                h = out;
                attn = Some(tape);
            }
        }
        let s = silu(&h);
        let cols_out = im2col(&s, self.arch.width, g);
        let eps = affine(th, self.off.conv_out, &cols_out, n);

        let mut video = Video::zeros(shape);
        for f in 0..g.frames {
            let frame = video.frame_mut(f);
            for ch in 0..c {
                frame[ch * p..(ch + 1) * p].copy_from_slice(&eps[ch * n + f * p..ch * n + (f + 1) * p]);
            }
        }
        Ok((
            video,
            Tape {
                geom: g,
                emb,
                cols_in,
                blocks,
                attn,
                pre_out: h,
                cols_out,
            },
        ))
    }

    fn block_forward(&self, b: BlockOff, x: Vec<f64>, emb: &[f64], g: Geom) -> (Vec<f64>, BlockTape) {
        let th = &self.weights;
        let (n, w) = (g.n(), self.arch.width);
        let u = silu(&x);
        let cols1 = im2col(&u, w, g);
        let c1 = affine(th, b.conv1, &cols1, n);
        let gb = affine(th, b.film, emb, 1);
        let gamma = gb[..w].to_vec();
        let mut f = c1.clone();
        for (ch, row) in f.chunks_mut(n).enumerate() {
            let (s, t) = (1.0 + gamma[ch], gb[w + ch]);
            for v in row {
                *v = *v * s + t;
            }
        }
        let u2 = silu(&f);
        let cols2 = im2col(&u2, w, g);
        let c2 = affine(th, b.conv2, &cols2, n);
        let out: Vec<f64> = x.iter().zip(&c2).map(|(a, b)| a + b).collect();
        (
            out,
            BlockTape {
                x,
                cols1,
                c1,
                gamma,
                f,
                cols2,
            },
        )
    }

    fn rel_index(&self, pi: usize, pj: usize) -> usize {
        let r = self.arch.max_rel_distance as i64;
        let d = (pi as i64 - pj as i64).clamp(-r, r);
        (d + r) as usize
    }

    fn attn_forward(&self, x: Vec<f64>, positions: &[usize], g: Geom) -> (Vec<f64>, AttnTape) {
        let th = &self.weights;
        let at = self.off.attn;
        let (n, p, nf) = (g.n(), g.p(), g.frames);
        let heads = self.arch.heads;
        let dh = self.arch.width / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let q = affine(th, at.q, &x, n);
        let k = affine(th, at.k, &x, n);
        let v = affine(th, at.v, &x, n);
        let rel_len = self.arch.rel_len();
        let rel_idx: Vec<usize> = (0..nf * nf)
            .map(|ij| self.rel_index(positions[ij / nf], positions[ij % nf]))
            .collect();
        let mut a = vec![0.0; p * heads * nf * nf];
        let mut o = vec![0.0; self.arch.width * n];
        let mut logits = vec![0.0; nf];
        for px in 0..p {
            for hd in 0..heads {
                let bias = &th[at.rel + hd * rel_len..][..rel_len];
                for i in 0..nf {
                    let mut mx = f64::NEG_INFINITY;
                    for j in 0..nf {
                        let mut s = 0.0;
                        for d in hd * dh..(hd + 1) * dh {
                            s += q[d * n + i * p + px] * k[d * n + j * p + px];
                        }
                        logits[j] = s * scale + bias[rel_idx[i * nf + j]];
                        mx = mx.max(logits[j]);
                    }
                    let row = &mut a[((px * heads + hd) * nf + i) * nf..][..nf];
                    let mut z = 0.0;
                    for j in 0..nf {
                        row[j] = (logits[j] - mx).exp();
                        z += row[j];
                    }
                    for r in row.iter_mut() {
                        *r /= z;
                    }
                    for d in hd * dh..(hd + 1) * dh {
                        let mut s = 0.0;
                        for j in 0..nf {
                            s += row[j] * v[d * n + j * p + px];
                        }
                        o[d * n + i * p + px] = s;
                    }
                }
            }
        }
        let proj = affine(th, at.o, &o, n);
        let out: Vec<f64> = x.iter().zip(&proj).map(|(a, b)| a + b).collect();
        (
            out,
            AttnTape {
                x,
                q,
                k,
                v,
                a,
                o,
                rel_idx,
            },
        )
    }

    /// Accumulates `∂L/∂θ` into `grad` given `∂L/∂ε̂` (same layout as the
    /// forward output).
    pub fn backward(&self, tape: &Tape, d_eps: &Video, grad: &mut [f64]) {
        assert_eq!(grad.len(), self.weights.len());
        let g = tape.geom;
        let (n, p, c, w) = (g.n(), g.p(), self.arch.channels, self.arch.width);
        let th = &self.weights;

        let mut de = vec![0.0; c * n];
        for f in 0..g.frames {
            let frame = d_eps.frame(f);
            for ch in 0..c {
                de[ch * n + f * p..ch * n + (f + 1) * p].copy_from_slice(&frame[ch * p..(ch + 1) * p]);
            }
        }
        let dcols = affine_back(th, self.off.conv_out, &tape.cols_out, &de, n, grad);
        let mut dh = vec![0.0; w * n];
        col2im(&dcols, w, g, &mut dh);
        silu_back(&tape.pre_out, &mut dh);

        for i in (0..self.arch.depth).rev() {
            if i == self.arch.attn_after() {
                if let Some(at) = &tape.attn {
                    dh = self.attn_backward(at, dh, g, grad);
                }
            }
            dh = self.block_backward(self.off.blocks[i], &tape.blocks[i], &tape.emb, dh, g, grad);
        }
        // the input itself carries no parameters; only the weight gradient is needed
        let lin = self.off.conv_in;
        for (r, row) in dh.chunks(n).enumerate() {
            grad[lin.b + r] += row.iter().sum::<f64>();
        }
        gemm(lin.rows, n, lin.cols, &dh, false, &tape.cols_in, true, 1.0, &mut grad[lin.w..lin.w + lin.rows * lin.cols]);
    }

    fn block_backward(&self, b: BlockOff, t: &BlockTape, emb: &[f64], dout: Vec<f64>, g: Geom, grad: &mut [f64]) -> Vec<f64> {
        let th = &self.weights;
        let (n, w) = (g.n(), self.arch.width);
        let dcols2 = affine_back(th, b.conv2, &t.cols2, &dout, n, grad);
        let mut df = vec![0.0; w * n];
        col2im(&dcols2, w, g, &mut df);
        silu_back(&t.f, &mut df);
        let mut dgb = vec![0.0; 2 * w];
        let mut dc1 = df;
        for ch in 0..w {
            let row = &mut dc1[ch * n..(ch + 1) * n];
            let c1 = &t.c1[ch * n..(ch + 1) * n];
            let mut dg = 0.0;
            let mut db = 0.0;
            let s = 1.0 + t.gamma[ch];
            for (d, &x) in row.iter_mut().zip(c1) {
                dg += *d * x;
                db += *d;
                *d *= s;
            }
            dgb[ch] = dg;
            dgb[w + ch] = db;
        }
        affine_back(th, b.film, emb, &dgb, 1, grad);
        let dcols1 = affine_back(th, b.conv1, &t.cols1, &dc1, n, grad);
        let mut du = vec![0.0; w * n];
        col2im(&dcols1, w, g, &mut du);
        silu_back(&t.x, &mut du);
        // residual path
        du.iter_mut().zip(&dout).for_each(|(a, b)| *a += b);
        du
    }

    fn attn_backward(&self, t: &AttnTape, dout: Vec<f64>, g: Geom, grad: &mut [f64]) -> Vec<f64> {
        let th = &self.weights;
        let at = self.off.attn;
        let (n, p, nf) = (g.n(), g.p(), g.frames);
        let w = self.arch.width;
        let heads = self.arch.heads;
        let dh = w / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let rel_len = self.arch.rel_len();

        let d_o = affine_back(th, at.o, &t.o, &dout, n, grad);
        let mut dq = vec![0.0; w * n];
        let mut dk = vec![0.0; w * n];
        let mut dv = vec![0.0; w * n];
        let mut da = vec![0.0; nf];
        for px in 0..p {
            for hd in 0..heads {
                for i in 0..nf {
                    let row = &t.a[((px * heads + hd) * nf + i) * nf..][..nf];
                    let mut dot = 0.0;
                    for j in 0..nf {
                        let mut s = 0.0;
                        for d in hd * dh..(hd + 1) * dh {
                            let go = d_o[d * n + i * p + px];
                            s += go * t.v[d * n + j * p + px];
                            dv[d * n + j * p + px] += row[j] * go;
                        }
                        da[j] = s;
                        dot += row[j] * s;
                    }
                    for j in 0..nf {
                        let dl = row[j] * (da[j] - dot);
                        grad[at.rel + hd * rel_len + t.rel_idx[i * nf + j]] += dl;
                        let dls = dl * scale;
                        for d in hd * dh..(hd + 1) * dh {
                            dq[d * n + i * p + px] += dls * t.k[d * n + j * p + px];
                            dk[d * n + j * p + px] += dls * t.q[d * n + i * p + px];
                        }
                    }
                }
            }
        }
        let mut dx = dout;
        for (lin, d) in [(at.q, &dq), (at.k, &dk), (at.v, &dv)] {
            let part = affine_back(th, lin, &t.x, d, n, grad);
            dx.iter_mut().zip(&part).for_each(|(a, b)| *a += b);
        }
        dx
    }
}

impl Denoiser for Network {
    fn max_frames(&self) -> usize {
        self.arch.max_frames
    }

    fn predict_eps(&self, input: &DenoiserInput<'_>) -> Result<Video> {
        Ok(self.forward(input)?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::VideoShape;
    use crate::masks::PixelMask;

    fn random_video(shape: VideoShape, seed: u64) -> Video {
        let mut r = rng::stream(seed, 7);
        let data = (0..shape.len()).map(|_| rng::box_muller(&mut r)).collect();
        Video::from_vec(shape, data).unwrap()
    }

    fn randomized(arch: &NetArch, seed: u64) -> Network {
        let mut p = init_params(arch, seed).unwrap();
        let mut r = rng::stream(seed, 99);
        for v in &mut p.theta {
            if *v == 0.0 {
                *v = 0.2 * rng::box_muller(&mut r);
            }
        }
        Network::new(arch.clone(), p.theta).unwrap()
    }

    #[test]
    fn default_param_count() {
        assert_eq!(param_count(&NetArch::default()), 44354);
    }

    #[test]
    fn layout_is_contiguous() {
        let (off, entries) = build_layout(&NetArch::default());
        let mut next = 0;
        for e in &entries {
            assert_eq!(e.offset, next, "{}", e.name);
            next += e.len();
        }
        assert_eq!(next, off.total);
        assert_eq!(entries.iter().filter(|e| e.name.starts_with("attn")).map(ParamEntry::len).sum::<usize>(), 4224 + 65);
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_params(&NetArch::default(), 5).unwrap();
        let b = init_params(&NetArch::default(), 5).unwrap();
        let c = init_params(&NetArch::default(), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.theta, c.theta);
    }

    #[test]
    fn zero_attention_projection_is_inert_at_init() {
        let arch = NetArch::default();
        let p = init_params(&arch, 3).unwrap();
        let net = p.network();
        let (_, tape) = net.forward(&input_for(&random_video(VideoShape::new(4, 1, 5, 5), 1), &[0, 1, 2, 3])).unwrap();
        let at = tape.attn.as_ref().unwrap();
        let n = 4 * 25;
        let proj = affine(net.weights(), net.off.attn.o, &at.o, n);
        assert!(proj.iter().all(|&v| v == 0.0));
    }

    fn input_for<'a>(v: &'a Video, pos: &'a [usize]) -> DenoiserInput<'a> {
        let s = v.shape();
        let mask: &'static PixelMask = Box::leak(Box::new(checker(s.frames, s.height, s.width)));
        DenoiserInput {
            frames: v,
            mask,
            positions: pos,
            sigma: 0.7,
        }
    }

    fn checker(f: usize, h: usize, w: usize) -> PixelMask {
        let bits = (0..f * h * w).map(|i| ((i / w + i % w + i / (h * w)) % 2) as u8).collect();
        PixelMask::from_bits(f, h, w, bits).unwrap()
    }

    #[test]
    fn translation_of_positions_is_bit_exact() {
        let arch = NetArch::default();
        let net = randomized(&arch, 11);
        let v = random_video(VideoShape::new(5, 1, 4, 4), 2);
        let a = net.predict_eps(&input_for(&v, &[0, 3, 4, 9, 20])).unwrap();
        let b = net.predict_eps(&input_for(&v, &[10, 13, 14, 19, 30])).unwrap();
        assert_eq!(a, b);
        let c = net.predict_eps(&input_for(&v, &[0, 3, 4, 9, 21])).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn frame_permutation_permutes_output() {
        let arch = NetArch::default();
        let net = randomized(&arch, 12);
        let v = random_video(VideoShape::new(4, 1, 4, 4), 3);
        let pos = [2, 5, 6, 11];
        let m = checker(4, 4, 4);
        let a = net
            .predict_eps(&DenoiserInput {
                frames: &v,
                mask: &m,
                positions: &pos,
                sigma: 1.3,
            })
            .unwrap();
        let perm = [2, 0, 3, 1];
        let vp = v.select_frames(&perm).unwrap();
        let mp = m.select_frames(&perm).unwrap();
        let pp: Vec<usize> = perm.iter().map(|&i| pos[i]).collect();
        let b = net
            .predict_eps(&DenoiserInput {
                frames: &vp,
                mask: &mp,
                positions: &pp,
                sigma: 1.3,
            })
            .unwrap();
        let ap = a.select_frames(&perm).unwrap();
        for (x, y) in ap.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn capacity_and_channel_errors() {
        let arch = NetArch {
            max_frames: 3,
            ..NetArch::default()
        };
        let net = init_params(&arch, 1).unwrap().network();
        let v = random_video(VideoShape::new(4, 1, 4, 4), 1);
        let err = net.predict_eps(&input_for(&v, &[0, 1, 2, 3])).unwrap_err();
        assert!(matches!(err, Error::Capacity { frames: 4, budget: 3, .. }));
        let v2 = random_video(VideoShape::new(2, 2, 4, 4), 1);
        assert!(net.predict_eps(&input_for(&v2, &[0, 1])).is_err());
    }

    #[test]
    fn finite_on_fully_observed_zero_noise() {
        let net = randomized(&NetArch::default(), 4);
        let v = random_video(VideoShape::new(3, 1, 4, 4), 9);
        let m = PixelMask::ones(3, 4, 4);
        let out = net
            .predict_eps(&DenoiserInput {
                frames: &v,
                mask: &m,
                positions: &[0, 1, 2],
                sigma: 0.0,
            })
            .unwrap();
        assert!(out.is_finite());
    }

    #[test]
    fn ema_examples() {
        let mut p = init_params(&NetArch::default(), 1).unwrap();
        p.theta.iter_mut().for_each(|v| *v = 1.0);
        p.ema.iter_mut().for_each(|v| *v = 0.0);
        p.ema_update(0.999);
        assert!(p.ema.iter().all(|&e| (e - 0.001).abs() < 1e-15));
        p.ema_update(0.0);
        assert_eq!(p.ema, p.theta);

        p.ema.iter_mut().for_each(|v| *v = 0.0);
        p.theta.iter_mut().for_each(|v| *v = 2.5);
        for _ in 0..1000 {
            p.ema_update(0.999);
        }
        let want = 2.5 * (1.0 - 0.999f64.powi(1000));
        assert!(p.ema.iter().all(|&e| (e - want).abs() < 1e-9));
    }

    /// Gradient of `Σ w ⊙ ε̂` against central differences.
    #[test]
    fn backward_matches_finite_differences() {
        let arch = NetArch {
            width: 8,
            heads: 2,
            ..NetArch::default()
        };
        let mut net = randomized(&arch, 21);
        let v = random_video(VideoShape::new(3, 1, 4, 4), 5);
        let wts = random_video(v.shape(), 6);
        let pos = [1usize, 2, 40];
        let m = checker(3, 4, 4);
        let loss = |net: &Network| -> f64 {
            let out = net
                .predict_eps(&DenoiserInput {
                    frames: &v,
                    mask: &m,
                    positions: &pos,
                    sigma: 0.4,
                })
                .unwrap();
            out.data().iter().zip(wts.data()).map(|(a, b)| a * b).sum()
        };
        let (_, tape) = net
            .forward(&DenoiserInput {
                frames: &v,
                mask: &m,
                positions: &pos,
                sigma: 0.4,
            })
            .unwrap();
        let mut grad = vec![0.0; net.weights().len()];
        net.backward(&tape, &wts, &mut grad);
        let h = 1e-5;
        for i in (0..grad.len()).step_by(7) {
            let orig = net.weights()[i];
            net.weights_mut()[i] = orig + h;
            let lp = loss(&net);
            net.weights_mut()[i] = orig - h;
            let lm = loss(&net);
            net.weights_mut()[i] = orig;
            let num = (lp - lm) / (2.0 * h);
            assert!((num - grad[i]).abs() <= 1e-6 * num.abs().max(grad[i].abs()) + 1e-8, "param {i}: analytic {} numeric {num}", grad[i]);
        }
    }
}
