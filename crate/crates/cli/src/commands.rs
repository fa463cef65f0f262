use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::Serialize;
use vidinpaint_core::data::gp::GpDataset;
use vidinpaint_core::data::sprites::gen_sprites;
use vidinpaint_core::data::{GpVideoSpec, SpriteWorld};
use vidinpaint_core::denoiser::{Checkpoint, GaussianOracle};
use vidinpaint_core::masks::generate_mask;
use vidinpaint_core::metrics::{evaluate, MetricRow};
use vidinpaint_core::oracle_check::{oracle_check, OracleCheckConfig};
use vidinpaint_core::orchestrator::{copy_nearest_known, stage_trace, StageSummary};
use vidinpaint_core::schemes::{plan_with, render_plan, validate, LookaheadSplit};
use vidinpaint_core::train::{train_loop, window_mean, TrainConfig, TrainData, TrainState};
use vidinpaint_core::{rng, Denoiser, Error, MaskSpec, SamplerConfig, SamplingScheme, SchemeKind};

use crate::args::*;
use crate::error::CliError;
use crate::io::{self, file_sha256, out_path, read_config, stages_sha256};
use crate::reports::*;
use crate::schemas;

/// What a command prints, and whether it counts as success.
pub struct Output {
    pub json: serde_json::Value,
    pub text: String,
    pub ok: bool,
}

impl Output {
    fn new<T: Serialize>(report: &T, text: String) -> Self {
        Self {
            json: serde_json::to_value(report).expect("report serialises"),
            text,
            ok: true,
        }
    }
}

pub fn run(cli: &Cli) -> Result<Output, CliError> {
    let dir = cli.out_dir.as_path();
    match &cli.command {
        Command::GenData(a) => gen_data(a, cli.seed, dir),
        Command::GenMasks(a) => gen_masks(a, cli.seed, dir),
        Command::Plan(a) => plan(a, dir),
        Command::Train(a) => train(a, cli.seed, dir),
        Command::Inpaint(a) => inpaint(a, cli.seed, dir),
        Command::Eval(a) => eval(a, dir),
        Command::OracleCheck(a) => oracle(a, cli.seed),
        Command::Schema(a) => schema(a),
    }
}

fn file_ref(full: &Path, shown: &Path) -> anyhow::Result<FileRef> {
    Ok(FileRef {
        path: shown.display().to_string(),
        sha256: file_sha256(full)?,
    })
}

fn gen_data(a: &GenDataArgs, seed: Option<u64>, dir: &Path) -> Result<Output, CliError> {
    let mut cfg = match &a.config {
        Some(p) => read_config::<DataConfig>(p)?,
        None => DataConfig {
            data: match a.kind {
                DataKind::Sprites => TrainData::Sprites(SpriteWorld::desk(0)),
                DataKind::Gp => TrainData::Gp(GpVideoSpec::oracle_default(0)),
            },
            n_videos: a.videos,
        },
    };
    if let Some(s) = seed {
        match &mut cfg.data {
            TrainData::Sprites(w) => w.seed = s,
            TrainData::Gp(g) => g.seed = s,
        }
    }
    let vpath = out_path(dir, &a.out)?;
    let (kind, shape, flows) = match &cfg.data {
        TrainData::Sprites(w) => {
            let ds = gen_sprites(w, cfg.n_videos)?;
            io::save_videos(&vpath, &ds.videos, true)?;
            let fpath = out_path(dir, &a.flows)?;
            io::save_flows(&fpath, &ds.flows)?;
            ("sprites", w.shape(), Some(file_ref(&fpath, &a.flows)?))
        }
        TrainData::Gp(g) => {
            let videos = GpDataset::new(g.clone())?.generate(cfg.n_videos);
            io::save_videos(&vpath, &videos, true)?;
            ("gp", g.shape(), None)
        }
    };
    let report = GenDataReport {
        kind: kind.into(),
        n_videos: cfg.n_videos,
        shape,
        videos: file_ref(&vpath, &a.out)?,
        flows,
    };
    let text = format!(
        "{} {} videos of {}x{}x{}x{} -> {}",
        report.n_videos, kind, shape.frames, shape.channels, shape.height, shape.width, report.videos.path
    );
    Ok(Output::new(&report, text))
}

fn gen_masks(a: &GenMasksArgs, seed: Option<u64>, dir: &Path) -> Result<Output, CliError> {
    let mut cfg = match &a.config {
        Some(p) => read_config::<MasksConfig>(p)?,
        None => MasksConfig {
            frames: a.frames,
            height: a.height,
            width: a.width,
            count: a.count,
            family: a.family,
            motion: a.motion,
            seed: 0,
        },
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let masks = (0..cfg.count)
        .map(|i| {
            let mut spec = MaskSpec::random(rng::child_seed(cfg.seed, i as u64));
            spec.family = cfg.family.unwrap_or(spec.family);
            spec.motion = cfg.motion.unwrap_or(spec.motion);
            generate_mask(&spec, cfg.frames, cfg.height, cfg.width)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let path = out_path(dir, &a.out)?;
    io::save_masks(&path, &masks)?;
    let total = (cfg.frames * cfg.height * cfg.width).max(1) as f64;
    let mean = if masks.is_empty() {
        0.0
    } else {
        masks.iter().map(|m| m.missing_count() as f64 / total).sum::<f64>() / masks.len() as f64
    };
    let report = GenMasksReport {
        count: cfg.count,
        frames: cfg.frames,
        height: cfg.height,
        width: cfg.width,
        mean_missing_fraction: mean,
        masks: file_ref(&path, &a.out)?,
    };
    let text = format!(
        "{} masks of {}x{}x{}, {:.1}% missing on average -> {}",
        cfg.count,
        cfg.frames,
        cfg.height,
        cfg.width,
        100.0 * mean,
        report.masks.path
    );
    Ok(Output::new(&report, text))
}

fn parse_split(s: &str) -> Result<LookaheadSplit, CliError> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::usage(format!("--split expects latent,past,future, got {s:?}")))?;
    match parts[..] {
        [latent, past, future] => Ok(LookaheadSplit { latent, past, future }),
        _ => Err(CliError::usage(format!("--split expects three numbers, got {s:?}"))),
    }
}

fn plan(a: &PlanArgs, dir: &Path) -> Result<Output, CliError> {
    let split = match &a.split {
        Some(s) => parse_split(s)?,
        None => LookaheadSplit::for_budget(a.budget),
    };
    let scheme = plan_with(a.kind, a.frames, a.budget, split)?;
    let violations = validate(&scheme);
    if !violations.is_empty() {
        return Err(Error::InvalidScheme(violations).into());
    }
    let file = match &a.out {
        Some(p) => {
            let full = out_path(dir, p)?;
            io::write_bytes(&full, scheme.to_json().as_bytes())?;
            Some(file_ref(&full, p)?)
        }
        None => None,
    };
    let grid = render_plan(&scheme);
    let render = match &a.render {
        Some(p) => {
            if a.cell == 0 {
                return Err(CliError::usage("--cell must be positive"));
            }
            let full = out_path(dir, p)?;
            io::write_bytes(&full, &grid.to_ppm(a.cell))?;
            Some(file_ref(&full, p)?)
        }
        None => None,
    };
    let report = PlanReport {
        n_stages: scheme.stages.len(),
        stages_sha256: stages_sha256(&scheme),
        scheme,
        file,
        render,
    };
    let mut text = grid.to_text();
    let _ = write!(
        text,
        "{} stages, stages_sha256 {}",
        report.n_stages, report.stages_sha256
    );
    Ok(Output::new(&report, text))
}

fn train(a: &TrainArgs, seed: Option<u64>, dir: &Path) -> Result<Output, CliError> {
    let mut cfg: TrainConfig = read_config(&a.config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(n) = a.steps {
        cfg.steps = n;
    }
    let state = match &a.resume {
        Some(p) => TrainState::from_checkpoint(Checkpoint::load(p)?)?,
        None => TrainState::new(&cfg)?,
    };
    let start = state.step;
    let mut on_ck = |s: &TrainState| -> vidinpaint_core::Result<()> {
        let p = dir.join(format!("checkpoint_{:06}.ckpt", s.step));
        std::fs::create_dir_all(dir)?;
        s.to_checkpoint().save(p)
    };
    let outcome = match train_loop(&cfg, state, &mut on_ck) {
        Ok(o) => o,
        Err(Error::Diverged { step, params }) => {
            let p = out_path(dir, Path::new("diverged.ckpt"))?;
            let ck = Checkpoint {
                params: *params,
                step,
                optimizer: None,
            };
            ck.save(&p)?;
            return Err(anyhow!(
                "train: non-finite loss at step {step}; parameters saved to {}",
                p.display()
            )
            .into());
        }
        Err(e) => return Err(e.into()),
    };
    let csv_name = PathBuf::from("loss.csv");
    let csv_path = out_path(dir, &csv_name)?;
    let mut csv = String::from("step,loss,grad_norm\n");
    for r in &outcome.trace {
        let _ = writeln!(csv, "{},{},{}", r.step, r.loss, r.grad_norm);
    }
    io::write_bytes(&csv_path, csv.as_bytes())?;
    let ck_name = PathBuf::from("model.ckpt");
    let ck_path = out_path(dir, &ck_name)?;
    outcome.state.to_checkpoint().save(&ck_path)?;
    let losses: Vec<f64> = outcome.trace.iter().map(|r| r.loss).collect();
    let n = losses.len();
    let w = n.min(100);
    let report = TrainReport {
        start_step: start,
        final_step: outcome.state.step,
        n_params: outcome.state.params.len(),
        loss_first: (n > 0).then(|| window_mean(&losses, 0..w)),
        loss_last: (n > 0).then(|| window_mean(&losses, n - w..n)),
        loss_csv: file_ref(&csv_path, &csv_name)?,
        checkpoint: file_ref(&ck_path, &ck_name)?,
    };
    let loss = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    let text = format!(
        "trained steps {}..{} ({} parameters); loss first/last window {} / {}; checkpoint {}",
        start,
        report.final_step,
        report.n_params,
        loss(report.loss_first),
        loss(report.loss_last),
        report.checkpoint.path
    );
    Ok(Output::new(&report, text))
}

enum Model {
    Net(Box<dyn Denoiser>),
    Copy,
}

fn inpaint(a: &InpaintArgs, seed: Option<u64>, dir: &Path) -> Result<Output, CliError> {
    let (model, name) = match (&a.checkpoint, &a.oracle, a.baseline) {
        (Some(p), None, false) => {
            let ck = Checkpoint::load(p)?;
            let net = match a.weights {
                Weights::Ema => ck.params.ema_network(),
                Weights::Raw => ck.params.network(),
            };
            (Model::Net(Box::new(net)), "network")
        }
        (None, Some(p), false) => {
            let spec: GpVideoSpec = read_config(p)?;
            (Model::Net(Box::new(GaussianOracle::new(&spec)?)), "oracle")
        }
        (None, None, true) => (Model::Copy, "copy_nearest_known"),
        _ => return Err(CliError::usage("give exactly one of --checkpoint, --oracle, --baseline")),
    };
    let mut cfg: SamplerConfig = match &a.sampler {
        Some(p) => read_config(p)?,
        None => SamplerConfig::default(),
    };
    if let Some(n) = a.steps {
        cfg.n_steps = n;
    }
    let base_seed = seed.unwrap_or(cfg.seed);
    let input = io::load_videos(&a.video)?;
    let masks = io::load_masks(&a.mask)?;
    let n_videos = input.videos.len();
    let n_frames = input.videos.first().map_or(0, |v| v.shape().frames);
    if input.videos.iter().any(|v| v.shape().frames != n_frames) {
        return Err(anyhow!("io: videos in {} differ in length", a.video.display()).into());
    }
    let scheme: SamplingScheme = match &a.scheme {
        Some(p) => read_config(p)?,
        None => plan_with(
            a.kind.unwrap_or(SchemeKind::Ar),
            n_frames,
            a.budget,
            LookaheadSplit::for_budget(a.budget),
        )?,
    };
    let hash = stages_sha256(&scheme);
    let mut outputs = Vec::with_capacity(n_videos);
    let mut summaries = Vec::with_capacity(n_videos);
    let mut sampled = 0;
    for (i, v) in input.videos.iter().enumerate() {
        let m = io::broadcast(&masks, i, "masks", n_videos)?;
        match &model {
            Model::Copy => outputs.push(copy_nearest_known(v, m)?),
            Model::Net(d) => {
                let c = SamplerConfig {
                    seed: rng::child_seed(base_seed, i as u64),
                    ..cfg.clone()
                };
                let trace = stage_trace(v, m, &scheme, d.as_ref(), &c).context(format!("video {i}"))?;
                sampled += trace.records.iter().filter(|r| r.sampled).count();
                summaries.push(trace.records.iter().map(StageSummary::from).collect::<Vec<_>>());
                outputs.push(trace.output);
            }
        }
    }
    let out = out_path(dir, &a.out)?;
    io::save_videos(&out, &outputs, input.batched)?;
    let trace = match &a.trace {
        Some(p) => {
            let full = out_path(dir, p)?;
            let t = InpaintTrace {
                stages_sha256: hash.clone(),
                videos: summaries,
            };
            io::write_bytes(&full, serde_json::to_string_pretty(&t).expect("trace").as_bytes())?;
            Some(file_ref(&full, p)?)
        }
        None => None,
    };
    let copy = matches!(model, Model::Copy);
    let report = InpaintReport {
        denoiser: name.into(),
        n_videos,
        n_stages: if copy { 0 } else { scheme.stages.len() },
        stages_sha256: hash,
        nfe_per_stage: if copy { 0 } else { cfg.nfe() },
        sampled_stages: sampled,
        output: file_ref(&out, &a.out)?,
        trace,
    };
    let text = format!(
        "inpainted {} video(s) with {} over {} stages ({} sampled) -> {}",
        n_videos, name, report.n_stages, sampled, report.output.path
    );
    Ok(Output::new(&report, text))
}

fn mean_of(rows: &[MetricRow], f: impl Fn(&MetricRow) -> Option<f64>) -> Option<f64> {
    let vals: Vec<f64> = rows.iter().filter_map(f).collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

fn eval_entry(e: &EvalEntry, per_video: bool) -> anyhow::Result<Vec<MetricRow>> {
    let truth = io::load_videos(Path::new(&e.truth))?.videos;
    let pred = io::load_videos(Path::new(&e.pred))?.videos;
    if truth.len() != pred.len() {
        return Err(anyhow!("metrics: {} truth videos vs {} predictions", truth.len(), pred.len()));
    }
    let masks = e.mask.as_deref().map(|p| io::load_masks(Path::new(p))).transpose()?;
    let flows = e.flow.as_deref().map(|p| io::load_flows(Path::new(p))).transpose()?;
    let n = truth.len();
    let mut rows = vec![];
    for i in 0..n {
        let m = masks.as_deref().map(|m| io::broadcast(m, i, "masks", n)).transpose()?;
        let f = flows.as_deref().map(|f| io::broadcast(f, i, "flows", n)).transpose()?;
        rows.push(evaluate(&format!("{}[{i}]", e.name), &truth[i], &pred[i], m, f)?);
    }
    let mut out = vec![MetricRow {
        name: e.name.clone(),
        psnr: mean_of(&rows, |r| r.psnr),
        psnr_missing: mean_of(&rows, |r| r.psnr_missing),
        ssim: mean_of(&rows, |r| r.ssim),
        mse_missing: mean_of(&rows, |r| r.mse_missing),
        warp_error: mean_of(&rows, |r| r.warp_error),
    }];
    if per_video {
        out.extend(rows);
    }
    Ok(out)
}

fn csv_table(rows: &[MetricRow]) -> String {
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut s = String::from("name,psnr,psnr_missing,ssim,mse_missing,warp_error\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.name,
            cell(r.psnr),
            cell(r.psnr_missing),
            cell(r.ssim),
            cell(r.mse_missing),
            cell(r.warp_error)
        );
    }
    s
}

fn eval(a: &EvalArgs, dir: &Path) -> Result<Output, CliError> {
    let entries = match (&a.manifest, &a.truth, &a.pred) {
        (Some(p), None, None) => read_config::<EvalManifest>(p)?.entries,
        (None, Some(t), Some(p)) => vec![EvalEntry {
            name: a.name.clone(),
            truth: t.display().to_string(),
            pred: p.display().to_string(),
            mask: a.mask.as_ref().map(|m| m.display().to_string()),
            flow: a.flow.as_ref().map(|f| f.display().to_string()),
        }],
        _ => return Err(CliError::usage("give either --manifest or both --truth and --pred")),
    };
    let mut rows = vec![];
    for e in &entries {
        rows.extend(eval_entry(e, a.per_video).with_context(|| format!("entry {:?}", e.name))?);
    }
    let table = csv_table(&rows);
    if let Some(p) = &a.csv {
        io::write_bytes(&out_path(dir, p)?, table.as_bytes())?;
    }
    let report = EvalReport { rows };
    Ok(Output::new(&report, table.trim_end().to_string()))
}

fn oracle(a: &OracleCheckArgs, seed: Option<u64>) -> Result<Output, CliError> {
    let mut cfg = match &a.config {
        Some(p) => read_config::<OracleCheckConfig>(p)?,
        None => OracleCheckConfig::default(),
    };
    if let Some(n) = a.samples {
        cfg.samples = n;
    }
    if let Some(n) = a.steps {
        cfg.sampler.n_steps = n;
    }
    if let Some(t) = a.threads {
        cfg.threads = t;
    }
    if let Some(s) = seed {
        cfg.sampler.seed = s;
    }
    let r = oracle_check(&cfg)?;
    let line = |name: &str, c: &vidinpaint_core::oracle_check::MomentCheck| {
        format!(
            "{name}: {} pixels, max |mean z| {:.3} (< {}), cov rel error {:.4} (< {}) {}",
            c.pixels,
            c.max_mean_z,
            cfg.mean_z_limit,
            c.cov_rel_error,
            cfg.cov_rel_limit,
            if c.mean_ok && c.cov_ok { "ok" } else { "FAIL" }
        )
    };
    let text = format!(
        "{} samples, {} network calls each\n{}\n{}\n{}",
        r.samples,
        r.nfe,
        line("direct", &r.direct),
        line("marginal", &r.marginal),
        if r.passed { "PASS" } else { "FAIL" }
    );
    let mut out = Output::new(&r, text);
    out.ok = r.passed;
    Ok(out)
}

fn schema(a: &SchemaArgs) -> Result<Output, CliError> {
    if let Some(dir) = &a.write {
        let files = schemas::write_all(dir).with_context(|| format!("io: writing {}", dir.display()))?;
        let text = format!("wrote {} schemas to {}", files.len(), dir.display());
        return Ok(Output::new(&files, text));
    }
    match &a.name {
        Some(n) => {
            let s = schemas::find(n).ok_or_else(|| CliError::usage(format!("unknown schema {n:?}")))?;
            Ok(Output {
                text: schemas::render(&s).trim_end().to_string(),
                json: s.to_value(),
                ok: true,
            })
        }
        None => {
            let names: Vec<&str> = schemas::all().into_iter().map(|(n, _)| n).collect();
            Ok(Output::new(&names, names.join("\n")))
        }
    }
}
