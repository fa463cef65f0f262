//! Masked-loss training with AdamW and an EMA shadow.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::gp::GpDataset;
use crate::data::sprites::gen_sprites_range;
use crate::data::{GpVideoSpec, SpriteWorld, Video};
use crate::denoiser::{
    init_params, Checkpoint, Denoiser, DenoiserInput, DenoiserParams, NetArch, Network, OptimizerState,
};
use crate::error::{Error, Result};
use crate::masks::{generate_mask, MaskSpec, PixelMask};
use crate::rng::{self, ChaCha8Rng};
use crate::schedule::{NoiseSchedule, ScheduleKind};
use crate::schemes::{sample_training_task, FrameIndexDistribution, TrainingTask};

/// Video source for training.
#[derive(Clone, Debug, PartialEq, Serialize, schemars::JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainData {
    Sprites(SpriteWorld),
    Gp(GpVideoSpec),
}

// Hand-written so that errors inside the variant keep their field path: the
// derived internally-tagged form buffers the content and loses it. The inner
// path is reported as a leading "at `path`: " in the message.
impl<'de> Deserialize<'de> for TrainData {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        fn inner<T: serde::de::DeserializeOwned, E: serde::de::Error>(
            v: serde_json::Value,
        ) -> std::result::Result<T, E> {
            serde_path_to_error::deserialize(v).map_err(|e| {
                let path = e.path().to_string();
                if path == "." {
                    E::custom(e.into_inner())
                } else {
                    E::custom(format_args!("at `{path}`: {}", e.into_inner()))
                }
            })
        }
        let mut map = serde_json::Map::deserialize(d)?;
        let kind = map.remove("kind").ok_or_else(|| D::Error::missing_field("kind"))?;
        let rest = serde_json::Value::Object(map);
        match kind.as_str() {
            Some("sprites") => inner(rest).map(TrainData::Sprites),
            Some("gp") => inner(rest).map(TrainData::Gp),
            Some(k) => Err(D::Error::unknown_variant(k, &["sprites", "gp"])),
            None => Err(D::Error::custom("`kind` must be a string")),
        }
    }
}

impl TrainData {
    pub fn frames(&self) -> usize {
        match self {
            TrainData::Sprites(w) => w.frames,
            TrainData::Gp(s) => s.frames,
        }
    }
}

/// Draws videos by index from a [`TrainData`].
pub enum VideoSource {
    Sprites(SpriteWorld),
    Gp(Box<GpDataset>),
}

impl VideoSource {
    pub fn new(data: &TrainData) -> Result<Self> {
        Ok(match data {
            TrainData::Sprites(w) => VideoSource::Sprites(w.clone()),
            TrainData::Gp(s) => VideoSource::Gp(Box::new(GpDataset::new(s.clone())?)),
        })
    }

    pub fn video(&self, index: usize) -> Result<Video> {
        match self {
            VideoSource::Sprites(w) => Ok(gen_sprites_range(w, index..index + 1)?.videos.remove(0)),
            VideoSource::Gp(d) => Ok(d.sample(index)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    #[serde(default = "lr")]
    pub lr: f64,
    #[serde(default = "weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "beta1")]
    pub beta1: f64,
    #[serde(default = "beta2")]
    pub beta2: f64,
    #[serde(default = "adam_eps")]
    pub adam_eps: f64,
    /// Global-norm gradient clip; `None` disables clipping.
    #[serde(default = "clip")]
    pub grad_clip: Option<f64>,
    #[serde(default = "ema_rate")]
    pub ema_rate: f64,
    #[serde(default = "cosine")]
    pub schedule: ScheduleKind,
    /// Number of diffusion steps T.
    #[serde(rename = "T", default = "thousand")]
    pub diffusion_steps: usize,
    pub budget: usize,
    #[serde(default = "half")]
    pub consecutive_prob: f64,
    #[serde(default = "four")]
    pub mean_gap: f64,
    /// Gradients summed over this many draws per optimizer step.
    #[serde(default = "one")]
    pub accumulate: usize,
    /// Training videos are indices `0..n_videos`; `None` draws a fresh video
    /// per step.
    #[serde(default)]
    pub n_videos: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
    pub data: TrainData,
    #[serde(default)]
    pub arch: NetArch,
}

fn lr() -> f64 {
    3e-4
}
fn weight_decay() -> f64 {
    0.01
}
fn beta1() -> f64 {
    0.9
}
fn beta2() -> f64 {
    0.999
}
fn adam_eps() -> f64 {
    1e-8
}
fn clip() -> Option<f64> {
    Some(1.0)
}
fn ema_rate() -> f64 {
    0.999
}
fn cosine() -> ScheduleKind {
    ScheduleKind::Cosine
}
fn thousand() -> usize {
    1000
}
fn half() -> f64 {
    0.5
}
fn four() -> f64 {
    4.0
}
fn one() -> usize {
    1
}

impl TrainConfig {
    /// Desk configuration: moving sprites, 16×16, 32 frames, K = 8.
    pub fn desk(steps: usize, seed: u64) -> Self {
        Self {
            steps,
            lr: lr(),
            weight_decay: weight_decay(),
            beta1: beta1(),
            beta2: beta2(),
            adam_eps: adam_eps(),
            grad_clip: clip(),
            ema_rate: ema_rate(),
            schedule: ScheduleKind::Cosine,
            diffusion_steps: 1000,
            budget: 8,
            consecutive_prob: 0.5,
            mean_gap: 4.0,
            accumulate: 1,
            n_videos: None,
            seed,
            checkpoint_every: None,
            data: TrainData::Sprites(SpriteWorld::desk(seed)),
            arch: NetArch::default(),
        }
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::param("train", m.to_string()));
        if !(self.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        if self.budget < 2 {
            return bad("budget K must be at least 2");
        }
        if self.budget > self.arch.max_frames {
            return bad("budget exceeds the network's max_frames");
        }
        if self.diffusion_steps < 2 {
            return bad("T must be at least 2");
        }
        if !(0.0..1.0).contains(&self.ema_rate) {
            return bad("ema_rate must lie in [0, 1)");
        }
        if self.accumulate == 0 {
            return bad("accumulate must be at least 1");
        }
        if self.n_videos == Some(0) {
            return bad("n_videos must be positive");
        }
        if self.data.frames() == 0 {
            return bad("videos must have frames");
        }
        let channels = match &self.data {
            TrainData::Sprites(w) => w.channels,
            TrainData::Gp(s) => s.channels,
        };
        if channels != self.arch.channels {
            return bad("data channels differ from the network's");
        }
        Ok(())
    }

    pub fn frame_distribution(&self) -> FrameIndexDistribution {
        FrameIndexDistribution {
            budget: self.budget,
            consecutive_prob: self.consecutive_prob,
            mean_gap: self.mean_gap,
        }
    }
}

/// Random choices of one training draw, all from `rng::stream(seed, draw)`.
#[derive(Clone, Debug)]
pub struct Draw {
    pub video_index: usize,
    pub mask_seed: u64,
    pub task: TrainingTask,
    pub t: usize,
    rng: ChaCha8Rng,
}

impl Draw {
    pub fn new(cfg: &TrainConfig, draw: u64) -> Self {
        let mut rng = rng::stream(cfg.seed, draw);
        let video_index = match cfg.n_videos {
            Some(n) => rng.random_range(0..n),
            None => draw as usize,
        };
        let mask_seed = rng.random::<u64>();
        let task = sample_training_task(&cfg.frame_distribution(), cfg.data.frames(), &mut rng);
        let t = rng.random_range(1..=cfg.diffusion_steps);
        Self {
            video_index,
            mask_seed,
            task,
            t,
            rng,
        }
    }

    /// Standard normal noise for `len` values, continuing the draw's stream.
    pub fn noise(&mut self, len: usize) -> Vec<f64> {
        (0..len).map(|_| rng::box_muller(&mut self.rng)).collect()
    }
}

/// Network input and target of one masked-loss evaluation.
pub struct LossInput {
    pub frames: Video,
    pub mask: PixelMask,
    pub positions: Vec<usize>,
    pub sigma: f64,
    pub eps: Video,
    pub n_missing: usize,
}

/// Builds `M_{X,Y}` and the noised input: clean values where the collated mask
/// is 1, `√ᾱ_t x + √(1-ᾱ_t) ε` where it is 0. `eps` covers the collated frames.
#[allow(clippy::too_many_arguments)]
pub fn prepare_loss_input(
    v: &Video,
    m: &PixelMask,
    x_idx: &[usize],
    y_idx: &[usize],
    schedule: &NoiseSchedule,
    t: usize,
    eps: Vec<f64>,
) -> Result<LossInput> {
    if t == 0 || t > schedule.steps {
        return Err(Error::param("train", format!("t={t} outside 1..={}", schedule.steps)));
    }
    let mask = m.collate(x_idx, y_idx)?;
    let positions: Vec<usize> = x_idx.iter().chain(y_idx).copied().collect();
    let mut frames = v.select_frames(&positions)?;
    let shape = frames.shape();
    let eps = Video::from_vec(shape, eps)?;
    let ab = schedule.alpha_bar(t);
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    let mut n_missing = 0;
    for f in 0..shape.frames {
        let mf = mask.frame(f).to_vec();
        let e = eps.frame(f).to_vec();
        for (i, val) in frames.frame_mut(f).iter_mut().enumerate() {
            if mf[i % shape.pixels()] == 0 {
                *val = sa * *val + sn * e[i];
                n_missing += 1;
            }
        }
    }
    Ok(LossInput {
        frames,
        mask,
        positions,
        sigma: schedule.sigma(t),
        eps,
        n_missing,
    })
}

impl LossInput {
    pub fn as_denoiser_input(&self) -> DenoiserInput<'_> {
        DenoiserInput {
            frames: &self.frames,
            mask: &self.mask,
            positions: &self.positions,
            sigma: self.sigma,
        }
    }

    /// Mean squared error over missing values, and its gradient w.r.t. `pred`.
    fn score(&self, pred: &Video) -> (f64, Video) {
        let shape = pred.shape();
        let mut grad = Video::zeros(shape);
        if self.n_missing == 0 {
            return (0.0, grad);
        }
        let inv = 1.0 / self.n_missing as f64;
        let mut loss = 0.0;
        for f in 0..shape.frames {
            let mf = self.mask.frame(f);
            let (p, e) = (pred.frame(f), self.eps.frame(f));
            let g = grad.frame_mut(f);
            for i in 0..p.len() {
                if mf[i % shape.pixels()] == 0 {
                    let r = p[i] - e[i];
                    loss += r * r;
                    g[i] = 2.0 * r * inv;
                }
            }
        }
        (loss * inv, grad)
    }
}

/// Mean of `(ε - ε̂)²` over missing values of the collated frames; 0 when
/// nothing is missing.
#[allow(clippy::too_many_arguments)]
pub fn masked_loss<D: Denoiser + ?Sized>(
    d: &D,
    v: &Video,
    m: &PixelMask,
    x_idx: &[usize],
    y_idx: &[usize],
    schedule: &NoiseSchedule,
    t: usize,
    eps: Vec<f64>,
) -> Result<f64> {
    let li = prepare_loss_input(v, m, x_idx, y_idx, schedule, t, eps)?;
    if li.n_missing == 0 {
        return Ok(0.0);
    }
    let pred = d.predict_eps(&li.as_denoiser_input())?;
    Ok(li.score(&pred).0)
}

/// Loss and parameter gradient for `net`.
pub fn masked_loss_grad(net: &Network, li: &LossInput) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; net.weights().len()];
    if li.n_missing == 0 {
        net.predict_eps(&li.as_denoiser_input())?;
        return Ok((0.0, grad));
    }
    let (pred, tape) = net.forward(&li.as_denoiser_input())?;
    let (loss, dpred) = li.score(&pred);
    net.backward(&tape, &dpred, &mut grad);
    Ok((loss, grad))
}

/// Decoupled-weight-decay Adam with optional global-norm clipping.
pub fn adamw_step(theta: &mut [f64], grad: &mut [f64], opt: &mut OptimizerState, cfg: &TrainConfig) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if let Some(c) = cfg.grad_clip {
        if norm > c {
            let s = c / norm;
            grad.iter_mut().for_each(|g| *g *= s);
        }
    }
    opt.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(opt.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(opt.t as i32);
    for i in 0..theta.len() {
        let g = grad[i];
        opt.m[i] = cfg.beta1 * opt.m[i] + (1.0 - cfg.beta1) * g;
        opt.v[i] = cfg.beta2 * opt.v[i] + (1.0 - cfg.beta2) * g * g;
        let mhat = opt.m[i] / bc1;
        let vhat = opt.v[i] / bc2;
        theta[i] -= cfg.lr * (mhat / (vhat.sqrt() + cfg.adam_eps) + cfg.weight_decay * theta[i]);
    }
    norm
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct LossRecord {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: DenoiserParams,
    pub optimizer: OptimizerState,
    /// Optimizer steps completed.
    pub step: usize,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        let params = init_params(&cfg.arch, cfg.seed)?;
        let optimizer = OptimizerState::new(params.len());
        Ok(Self {
            params,
            optimizer,
            step: 0,
        })
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let n = ck.params.len();
        Ok(Self {
            optimizer: ck.optimizer.unwrap_or_else(|| OptimizerState::new(n)),
            params: ck.params,
            step: ck.step,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            step: self.step,
            optimizer: Some(self.optimizer.clone()),
        }
    }
}

pub struct TrainOutcome {
    pub state: TrainState,
    pub trace: Vec<LossRecord>,
}

/// Builds the loss input for draw number `draw`.
pub fn draw_loss_input(cfg: &TrainConfig, source: &VideoSource, schedule: &NoiseSchedule, draw: u64) -> Result<LossInput> {
    let mut d = Draw::new(cfg, draw);
    let v = source.video(d.video_index)?;
    let s = v.shape();
    let mask = generate_mask(&MaskSpec::random(d.mask_seed), s.frames, s.height, s.width)?;
    let n = (d.task.x.len() + d.task.y.len()) * s.frame_len();
    let eps = d.noise(n);
    prepare_loss_input(&v, &mask, d.task.x.as_slice(), d.task.y.as_slice(), schedule, d.t, eps)
}

/// Runs optimizer steps `state.step..cfg.steps`. `on_checkpoint` is called
/// every `cfg.checkpoint_every` steps.
pub fn train_loop(
    cfg: &TrainConfig,
    mut state: TrainState,
    on_checkpoint: &mut dyn FnMut(&TrainState) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.check()?;
    if state.params.arch != cfg.arch {
        return Err(Error::param("train", "checkpoint architecture differs from the config"));
    }
    let source = VideoSource::new(&cfg.data)?;
    let schedule = NoiseSchedule::build(cfg.schedule, cfg.diffusion_steps)?;
    let mut trace = Vec::with_capacity(cfg.steps.saturating_sub(state.step));
    let mut net = state.params.network();
    while state.step < cfg.steps {
        let step = state.step;
        let mut grad = vec![0.0; state.params.len()];
        let mut loss = 0.0;
        for a in 0..cfg.accumulate {
            let draw = (step * cfg.accumulate + a) as u64;
            let li = draw_loss_input(cfg, &source, &schedule, draw)?;
            let (l, g) = masked_loss_grad(&net, &li)?;
            loss += l / cfg.accumulate as f64;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b / cfg.accumulate as f64);
        }
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                step,
                params: Box::new(state.params),
            });
        }
        let grad_norm = adamw_step(&mut state.params.theta, &mut grad, &mut state.optimizer, cfg);
        state.params.ema_update(cfg.ema_rate);
        net.weights_mut().copy_from_slice(&state.params.theta);
        state.step += 1;
        trace.push(LossRecord {
            step,
            loss,
            grad_norm,
        });
        if cfg.checkpoint_every.is_some_and(|k| k > 0 && state.step.is_multiple_of(k)) {
            on_checkpoint(&state)?;
        }
    }
    Ok(TrainOutcome { state, trace })
}

/// Mean of `values[range]`, or NaN when empty.
pub fn window_mean(values: &[f64], range: std::ops::Range<usize>) -> f64 {
    let w = &values[range];
    w.iter().sum::<f64>() / w.len() as f64
}
