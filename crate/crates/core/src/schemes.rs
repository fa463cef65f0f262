//! Sampling schemes: which frames are generated (latent, `X_s`) and which are
//! conditioned on (observed, `Y_s`) at each stage, under a K-frame budget.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sorted, distinct frame indices.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(transparent)]
pub struct FrameIndexSet(Vec<usize>);

impl FrameIndexSet {
    /// Sorts and deduplicates.
    pub fn new(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self(indices)
    }

    /// Keeps the given order; [`validate`] reports unsorted sets.
    pub fn from_raw(indices: Vec<usize>) -> Self {
        Self(indices)
    }

    pub fn range(r: std::ops::Range<usize>) -> Self {
        Self(r.collect())
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn contains(&self, f: usize) -> bool {
        self.0.binary_search(&f).is_ok()
    }

    fn is_strictly_sorted(&self) -> bool {
        self.0.windows(2).all(|w| w[0] < w[1])
    }
}

impl From<Vec<usize>> for FrameIndexSet {
    fn from(v: Vec<usize>) -> Self {
        Self::new(v)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, schemars::JsonSchema)]
pub struct Stage {
    pub x: FrameIndexSet,
    pub y: FrameIndexSet,
    /// One flag per entry of `y`; `true` allows that frame to still contain
    /// missing pixels when the stage runs.
    pub incomplete: Vec<bool>,
}

impl Stage {
    pub fn new(x: Vec<usize>, y: Vec<usize>, incomplete: Vec<bool>) -> Self {
        Self {
            x: FrameIndexSet::from_raw(x),
            y: FrameIndexSet::from_raw(y),
            incomplete,
        }
    }

    fn complete_context(x: Vec<usize>, y: Vec<usize>) -> Self {
        let n = y.len();
        Self::new(x, y, vec![false; n])
    }

    pub fn frames(&self) -> usize {
        self.x.len() + self.y.len()
    }

    /// `X ⊕ Y`, the frame order used for network calls.
    pub fn frame_order(&self) -> Vec<usize> {
        self.x.iter().chain(self.y.iter()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    Ar,
    ReverseAr,
    Hierarchy2,
    LookaheadAr,
    LookaheadArPp,
    MultiresAr2,
    MultiresAr3,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 7] = [
        SchemeKind::Ar,
        SchemeKind::ReverseAr,
        SchemeKind::Hierarchy2,
        SchemeKind::LookaheadAr,
        SchemeKind::LookaheadArPp,
        SchemeKind::MultiresAr2,
        SchemeKind::MultiresAr3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Ar => "ar",
            SchemeKind::ReverseAr => "reverse_ar",
            SchemeKind::Hierarchy2 => "hierarchy2",
            SchemeKind::LookaheadAr => "lookahead_ar",
            SchemeKind::LookaheadArPp => "lookahead_ar_pp",
            SchemeKind::MultiresAr2 => "multires_ar2",
            SchemeKind::MultiresAr3 => "multires_ar3",
        }
    }

    fn uses_lookahead(self) -> bool {
        matches!(
            self,
            SchemeKind::LookaheadAr | SchemeKind::LookaheadArPp | SchemeKind::MultiresAr2 | SchemeKind::MultiresAr3
        )
    }

    /// Smallest budget the planner accepts for this kind.
    pub fn min_budget(self) -> usize {
        if self.uses_lookahead() {
            4
        } else {
            2
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .to_ascii_lowercase()
            .chars()
            .filter(|c| c.is_ascii_alphanumeric() || *c == '+')
            .collect();
        Ok(match norm.as_str() {
            "ar" | "autoregressive" => SchemeKind::Ar,
            "reversear" => SchemeKind::ReverseAr,
            "hierarchy2" => SchemeKind::Hierarchy2,
            "lookaheadar" => SchemeKind::LookaheadAr,
            "lookaheadarpp" | "lookaheadar++" => SchemeKind::LookaheadArPp,
            "multiresar2" => SchemeKind::MultiresAr2,
            "multiresar3" => SchemeKind::MultiresAr3,
            _ => return Err(Error::param("schemes", format!("unknown scheme kind '{s}'"))),
        })
    }
}

/// Budget split of a lookahead stage: latent frames, completed past frames and
/// incomplete future frames.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct LookaheadSplit {
    pub latent: usize,
    pub past: usize,
    pub future: usize,
}

impl LookaheadSplit {
    /// K/2 latent, K/4 past, K/4 future (rounding spare slots into the past).
    pub fn for_budget(k: usize) -> Self {
        let latent = k / 2;
        let future = k / 4;
        Self {
            latent,
            past: k - latent - future,
            future,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct SamplingScheme {
    /// `None` for hand-written schemes.
    #[serde(default)]
    pub kind: Option<SchemeKind>,
    pub n_frames: usize,
    pub budget: usize,
    pub stages: Vec<Stage>,
}

impl SamplingScheme {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scheme serialises")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Largest number of frames any stage passes to the network.
    pub fn max_stage_frames(&self) -> usize {
        self.stages.iter().map(Stage::frames).max().unwrap_or(0)
    }
}

pub fn plan(kind: SchemeKind, n_frames: usize, budget: usize) -> Result<SamplingScheme> {
    plan_with(kind, n_frames, budget, LookaheadSplit::for_budget(budget))
}

/// [`plan`] with an explicit lookahead split (ignored by non-lookahead kinds).
pub fn plan_with(kind: SchemeKind, n: usize, k: usize, split: LookaheadSplit) -> Result<SamplingScheme> {
    if n == 0 {
        return Err(Error::param("schemes", "video must have at least one frame"));
    }
    if k < kind.min_budget() {
        return Err(Error::param(
            "schemes",
            format!("{kind} needs a budget of at least {}, got {k}", kind.min_budget()),
        ));
    }
    if kind.uses_lookahead() && (split.latent == 0 || split.latent + split.past + split.future != k) {
        return Err(Error::param(
            "schemes",
            format!("lookahead split {split:?} must have latent > 0 and sum to K={k}"),
        ));
    }
    if n <= k {
        return Ok(SamplingScheme {
            kind: Some(kind),
            n_frames: n,
            budget: k,
            stages: vec![Stage::complete_context((0..n).collect(), vec![])],
        });
    }
    let stages = match kind {
        SchemeKind::Ar => autoregressive(n, k),
        SchemeKind::ReverseAr => reverse(autoregressive(n, k), n),
        SchemeKind::Hierarchy2 => hierarchy2(n, k),
        SchemeKind::LookaheadAr => lookahead(n, k, split, false),
        SchemeKind::LookaheadArPp => lookahead(n, k, split, true),
        SchemeKind::MultiresAr2 => multires(n, k, split, &[3]),
        SchemeKind::MultiresAr3 => multires(n, k, split, &[15, 5]),
    };
    Ok(SamplingScheme {
        kind: Some(kind),
        n_frames: n,
        budget: k,
        stages,
    })
}

fn autoregressive(n: usize, k: usize) -> Vec<Stage> {
    if n <= k {
        return vec![Stage::complete_context((0..n).collect(), vec![])];
    }
    let half = k / 2;
    let mut stages = vec![Stage::complete_context((0..k).collect(), vec![])];
    let mut next = k;
    while next < n {
        let nl = half.min(n - next);
        let past = k - nl;
        stages.push(Stage::complete_context(
            (next..next + nl).collect(),
            (next - past..next).collect(),
        ));
        next += nl;
    }
    stages
}

fn reverse(stages: Vec<Stage>, n: usize) -> Vec<Stage> {
    let flip = |s: &FrameIndexSet| FrameIndexSet::new(s.iter().map(|i| n - 1 - i).collect());
    stages
        .into_iter()
        .map(|s| {
            // reversing a sorted set reverses the flag order
            let mut incomplete = s.incomplete.clone();
            incomplete.reverse();
            Stage {
                x: flip(&s.x),
                y: flip(&s.y),
                incomplete,
            }
        })
        .collect()
}

fn round_half_up(v: f64) -> usize {
    (v + 0.5).floor() as usize
}

fn hierarchy2(n: usize, k: usize) -> Vec<Stage> {
    if n <= k {
        return vec![Stage::complete_context((0..n).collect(), vec![])];
    }
    let keys: Vec<usize> = (0..k)
        .map(|i| round_half_up(i as f64 * (n - 1) as f64 / (k - 1) as f64))
        .collect();
    let mut stages = vec![Stage::complete_context(keys.clone(), vec![])];
    for pair in keys.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let gap: Vec<usize> = (a + 1..b).collect();
        // with K = 2 only the left keyframe fits beside one latent
        let (size, ctx) = if k > 2 { (k - 2, vec![a, b]) } else { (1, vec![a]) };
        for chunk in gap.chunks(size) {
            stages.push(Stage::complete_context(chunk.to_vec(), ctx.clone()));
        }
    }
    stages
}

/// Evenly spaced picks of `count` frames from `lo..n`, both ends included.
fn spread(lo: usize, n: usize, count: usize) -> Vec<usize> {
    let len = n - lo;
    let c = count.min(len);
    if c == len {
        (lo..n).collect()
    } else if c == 1 {
        vec![n - 1]
    } else {
        (0..c)
            .map(|j| lo + round_half_up(j as f64 * (len - 1) as f64 / (c - 1) as f64))
            .collect()
    }
}

fn lookahead(n: usize, k: usize, split: LookaheadSplit, far_future: bool) -> Vec<Stage> {
    if n <= k {
        return vec![Stage::complete_context((0..n).collect(), vec![])];
    }
    let f = split.future;
    let first = k - f;
    let ahead: Vec<usize> = if far_future {
        spread(first, n, f)
    } else {
        (first..k).collect()
    };
    let n_ahead = ahead.len();
    let mut stages = vec![Stage::new((0..first).collect(), ahead, vec![true; n_ahead])];
    let mut next = first;
    while next < n {
        let nl = split.latent.min(n - next);
        let lo = next + nl;
        let future: Vec<usize> = if far_future {
            spread(lo, n, f)
        } else {
            (lo..(lo + f).min(n)).collect()
        };
        let past = (k - nl - future.len()).min(next);
        let mut y: Vec<usize> = (next - past..next).collect();
        let mut incomplete = vec![false; y.len()];
        incomplete.extend(std::iter::repeat_n(true, future.len()));
        y.extend(future);
        stages.push(Stage::new((next..lo).collect(), y, incomplete));
        next = lo;
    }
    stages
}

fn multires(n: usize, k: usize, split: LookaheadSplit, strides: &[usize]) -> Vec<Stage> {
    let sub: Vec<usize> = (0..n).step_by(strides[0]).collect();
    let mut stages: Vec<Stage> = lookahead(sub.len(), k, split, false)
        .into_iter()
        .map(|s| {
            Stage::new(
                s.x.iter().map(|i| sub[i]).collect(),
                s.y.iter().map(|i| sub[i]).collect(),
                s.incomplete,
            )
        })
        .collect();
    let mut done: BTreeSet<usize> = sub.into_iter().collect();
    let chunk = (k / 2).max(1);
    for &stride in strides[1..].iter().chain(std::iter::once(&1)) {
        let targets: Vec<usize> = (0..n).step_by(stride).filter(|i| !done.contains(i)).collect();
        for x in targets.chunks(chunk) {
            let context = nearest_done(&done, x, k - x.len());
            stages.push(Stage::complete_context(x.to_vec(), context));
            done.extend(x.iter().copied());
        }
    }
    stages
}

/// Up to `count` completed frames closest to the block, ties towards earlier
/// frames, returned sorted.
fn nearest_done(done: &BTreeSet<usize>, block: &[usize], count: usize) -> Vec<usize> {
    let dist = |d: usize| block.iter().map(|&x| x.abs_diff(d)).min().unwrap_or(usize::MAX);
    let mut cand: Vec<usize> = done.iter().copied().collect();
    cand.sort_by_key(|&d| (dist(d), d));
    cand.truncate(count);
    cand.sort_unstable();
    cand
}

/// A broken scheme invariant, located by stage (0-based).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Violation {
    Unsorted { stage: usize },
    OutOfRange { stage: usize, frame: usize },
    Overlap { stage: usize, frame: usize },
    OverBudget { stage: usize, frames: usize, budget: usize },
    FlagCount { stage: usize, flags: usize, observed: usize },
    DuplicateLatent { stage: usize, frame: usize, first_stage: usize },
    Uncovered { frame: usize },
    Causality { stage: usize, frame: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Unsorted { stage } => write!(f, "stage {stage}: index set not sorted/unique"),
            Violation::OutOfRange { stage, frame } => write!(f, "stage {stage}: frame {frame} out of range"),
            Violation::Overlap { stage, frame } => write!(f, "stage {stage}: frame {frame} in both X and Y"),
            Violation::OverBudget { stage, frames, budget } => {
                write!(f, "stage {stage}: {frames} frames exceed budget {budget}")
            }
            Violation::FlagCount { stage, flags, observed } => {
                write!(f, "stage {stage}: {flags} incomplete flags for {observed} observed frames")
            }
            Violation::DuplicateLatent {
                stage,
                frame,
                first_stage,
            } => write!(f, "stage {stage}: frame {frame} already latent in stage {first_stage}"),
            Violation::Uncovered { frame } => write!(f, "frame {frame} is never latent"),
            Violation::Causality { stage, frame } => {
                write!(f, "stage {stage}: observed frame {frame} is not yet inpainted")
            }
        }
    }
}

/// Every broken invariant; empty iff the scheme is sound.
pub fn validate(s: &SamplingScheme) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut latent_stage: Vec<Option<usize>> = vec![None; s.n_frames];
    for (i, st) in s.stages.iter().enumerate() {
        if !st.x.is_strictly_sorted() || !st.y.is_strictly_sorted() {
            out.push(Violation::Unsorted { stage: i });
        }
        for f in st.x.iter().chain(st.y.iter()) {
            if f >= s.n_frames {
                out.push(Violation::OutOfRange { stage: i, frame: f });
            }
        }
        for f in st.x.iter() {
            if st.y.as_slice().contains(&f) {
                out.push(Violation::Overlap { stage: i, frame: f });
            }
        }
        if st.frames() > s.budget {
            out.push(Violation::OverBudget {
                stage: i,
                frames: st.frames(),
                budget: s.budget,
            });
        }
        if st.incomplete.len() != st.y.len() {
            out.push(Violation::FlagCount {
                stage: i,
                flags: st.incomplete.len(),
                observed: st.y.len(),
            });
        }
        for (j, f) in st.y.iter().enumerate() {
            if f >= s.n_frames {
                continue;
            }
            let allowed = st.incomplete.get(j).copied().unwrap_or(false);
            let done = matches!(latent_stage[f], Some(p) if p < i);
            if !allowed && !done {
                out.push(Violation::Causality { stage: i, frame: f });
            }
        }
        for f in st.x.iter() {
            if f >= s.n_frames {
                continue;
            }
            match latent_stage[f] {
                Some(first) => out.push(Violation::DuplicateLatent {
                    stage: i,
                    frame: f,
                    first_stage: first,
                }),
                None => latent_stage[f] = Some(i),
            }
        }
    }
    for (f, st) in latent_stage.iter().enumerate() {
        if st.is_none() {
            out.push(Violation::Uncovered { frame: f });
        }
    }
    out
}

/// Training-time distribution `u(X, Y)` over frame-index tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct FrameIndexDistribution {
    pub budget: usize,
    #[serde(default = "half")]
    pub consecutive_prob: f64,
    /// Mean of the geometric gap between successively added frames.
    #[serde(default = "four")]
    pub mean_gap: f64,
}

fn half() -> f64 {
    0.5
}

fn four() -> f64 {
    4.0
}

impl FrameIndexDistribution {
    pub fn new(budget: usize) -> Self {
        Self {
            budget,
            consecutive_prob: half(),
            mean_gap: four(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingTask {
    pub x: FrameIndexSet,
    pub y: FrameIndexSet,
    /// Whether the consecutive-run component produced this draw.
    pub consecutive: bool,
}

fn geometric_gap<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> usize {
    if mean <= 1.0 {
        return 1;
    }
    let p = 1.0 / mean;
    let u: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
    ((u.ln() / (1.0 - p).ln()).floor() as usize) + 1
}

/// Draws `(X, Y)` for an `n`-frame video.
///
/// With probability `consecutive_prob` the frames form a run of `min(K, n)`
/// consecutive indices; otherwise a random walk with geometric signed gaps
/// collects `min(K, n)` distinct frames. Either way the set is split uniformly
/// into a non-empty `X` and the remainder `Y`.
pub fn sample_training_task<R: Rng + ?Sized>(d: &FrameIndexDistribution, n: usize, rng: &mut R) -> TrainingTask {
    assert!(n >= 1 && d.budget >= 1);
    let count = d.budget.min(n);
    let consecutive = rng.random::<f64>() < d.consecutive_prob;
    let mut frames: Vec<usize> = if consecutive {
        let start = rng.random_range(0..=n - count);
        (start..start + count).collect()
    } else {
        let mut chosen = BTreeSet::new();
        let mut cur = rng.random_range(0..n);
        chosen.insert(cur);
        let mut attempts = 0;
        while chosen.len() < count {
            let gap = geometric_gap(d.mean_gap, rng) as i64;
            let signed = if rng.random::<bool>() { gap } else { -gap };
            cur = (cur as i64 + signed).clamp(0, n as i64 - 1) as usize;
            chosen.insert(cur);
            attempts += 1;
            if attempts > 64 * count {
                // walk is stuck against a border; fill uniformly
                let rest: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
                let need = count - chosen.len();
                chosen.extend(rest.choose_multiple(rng, need).copied());
            }
        }
        chosen.into_iter().collect()
    };
    let n_x = rng.random_range(1..=count);
    frames.shuffle(rng);
    let y = frames.split_off(n_x);
    TrainingTask {
        x: FrameIndexSet::new(frames),
        y: FrameIndexSet::new(y),
        consecutive,
    }
}

/// A [`FrameIndexDistribution`] with its own generator.
pub struct TaskSampler<R> {
    pub dist: FrameIndexDistribution,
    rng: R,
}

impl<R: Rng> TaskSampler<R> {
    pub fn new(dist: FrameIndexDistribution, rng: R) -> Self {
        Self { dist, rng }
    }

    pub fn sample(&mut self, n: usize) -> TrainingTask {
        sample_training_task(&self.dist, n, &mut self.rng)
    }
}

/// State of one frame in one stage of a rendered plan.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cell {
    Latent,
    ObservedComplete,
    ObservedIncomplete,
    Done,
    Pending,
}

impl Cell {
    pub fn glyph(self) -> char {
        match self {
            Cell::Latent => 'X',
            Cell::ObservedComplete => 'o',
            Cell::ObservedIncomplete => '+',
            Cell::Done => '.',
            Cell::Pending => ' ',
        }
    }

    pub fn rgb(self) -> [u8; 3] {
        match self {
            Cell::Latent => [0, 255, 255],
            Cell::ObservedComplete => [139, 0, 0],
            Cell::ObservedIncomplete => [255, 0, 0],
            Cell::Done => [128, 128, 128],
            Cell::Pending => [255, 255, 255],
        }
    }
}

/// One row per stage, one column per frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageGrid {
    pub rows: Vec<Vec<Cell>>,
}

pub fn render_plan(s: &SamplingScheme) -> StageGrid {
    let mut done = vec![false; s.n_frames];
    let mut rows = Vec::with_capacity(s.stages.len());
    for st in &s.stages {
        let mut row: Vec<Cell> = done
            .iter()
            .map(|&d| if d { Cell::Done } else { Cell::Pending })
            .collect();
        for f in st.y.iter().filter(|&f| f < s.n_frames) {
            row[f] = if done[f] {
                Cell::ObservedComplete
            } else {
                Cell::ObservedIncomplete
            };
        }
        for f in st.x.iter().filter(|&f| f < s.n_frames) {
            row[f] = Cell::Latent;
        }
        for f in st.x.iter().filter(|&f| f < s.n_frames) {
            done[f] = true;
        }
        rows.push(row);
    }
    StageGrid { rows }
}

impl StageGrid {
    pub fn stages(&self) -> usize {
        self.rows.len()
    }

    pub fn frames(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, row) in self.rows.iter().enumerate() {
            out.push_str(&format!("{:>4} |", i + 1));
            out.extend(row.iter().map(|c| c.glyph()));
            out.push_str("|\n");
        }
        out
    }

    /// Binary PPM (P6), `cell` pixels per square with a one-pixel white gutter.
    pub fn to_ppm(&self, cell: usize) -> Vec<u8> {
        let cell = cell.max(1);
        let pitch = cell + 1;
        let w = self.frames() * pitch + 1;
        let h = self.stages() * pitch + 1;
        let mut px = vec![255u8; w * h * 3];
        for (r, row) in self.rows.iter().enumerate() {
            for (c, &state) in row.iter().enumerate() {
                let rgb = state.rgb();
                for dy in 0..cell {
                    for dx in 0..cell {
                        let y = r * pitch + 1 + dy;
                        let x = c * pitch + 1 + dx;
                        px[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&rgb);
                    }
                }
            }
        }
        let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
        out.extend(px);
        out
    }
}
