//! Acceptance suite. Runs every criterion at its stated tolerance, prints one
//! PASS/FAIL line per criterion and exits non-zero if any failed.
//!
//! Criterion 6 trains the desk model for 5000 steps and takes several minutes.
//! Pass criterion numbers to run a subset: `cargo test --test acceptance -- 4 9`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use vidinpaint_core::data::sprites::gen_sprites;
use vidinpaint_core::data::{GpVideoSpec, SpriteWorld, VideoShape};
use vidinpaint_core::denoiser::{init_params, CountingDenoiser, DenoiserParams, GaussianOracle, NetArch};
use vidinpaint_core::masks::generate_mask;
use vidinpaint_core::metrics::{psnr, ssim, warp_error};
use vidinpaint_core::oracle_check::{oracle_check, OracleCheckConfig, OracleReport};
use vidinpaint_core::orchestrator::copy_nearest_known;
use vidinpaint_core::sampler::sample_stage;
use vidinpaint_core::schemes::{plan, validate};
use vidinpaint_core::train::{
    masked_loss_grad, prepare_loss_input, train_loop, window_mean, TrainConfig, TrainData, TrainState, VideoSource,
};
use vidinpaint_core::{
    inpaint, rng, MaskSpec, NoiseSchedule, PixelMask, SamplerConfig, ScheduleKind, SchemeKind, SigmaGrid, Video,
};

use rand::Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn perturbed_params(arch: &NetArch, seed: u64, scale: f64) -> DenoiserParams {
    let mut p = init_params(arch, seed).unwrap();
    let mut r = rng::stream(seed, 99);
    for w in p.theta.iter_mut() {
        *w += scale * rng::box_muller(&mut r);
    }
    p.ema = p.theta.clone();
    p
}

fn oracle_outcome(r: &OracleReport, marginal: bool, elapsed: Duration) -> Outcome {
    let c = if marginal { &r.marginal } else { &r.direct };
    let detail = format!(
        "{} samples, x={:?} y={:?}, max |mean z| {:.3} < 3, cov rel error {:.4}{}, {:.1}s",
        r.samples,
        c.x,
        c.y,
        c.max_mean_z,
        c.cov_rel_error,
        if marginal { "" } else { " < 0.10" },
        elapsed.as_secs_f64()
    );
    let ok = if marginal {
        c.mean_ok
    } else {
        c.mean_ok && c.cov_ok && elapsed < Duration::from_secs(600)
    };
    ensure(ok, detail)
}

fn nfe_count() -> Outcome {
    let spec = GpVideoSpec::oracle_default(1);
    let d = CountingDenoiser::new(GaussianOracle::new(&spec).unwrap());
    let v = vidinpaint_core::data::gp::GpDataset::new(spec).unwrap().sample(0);
    let m = vidinpaint_core::oracle_check::oracle_mask(5, 2, 2);
    let mut seen = vec![];
    for n in [10, 25, 50, 100] {
        d.reset();
        let cfg = SamplerConfig {
            n_steps: n,
            ..SamplerConfig::default()
        };
        sample_stage(&d, &v, &m, &[1, 2, 3], &[0, 4], &cfg).unwrap();
        seen.push((n, d.calls()));
    }
    let ok = seen.iter().all(|&(n, c)| c == 2 * n - 1);
    ensure(ok, format!("(steps, calls) = {seen:?}"))
}

fn gradient_check() -> Outcome {
    let arch = NetArch::default();
    let params = perturbed_params(&arch, 4, 0.05);
    let mut net = params.network();
    let spec = GpVideoSpec {
        frames: 5,
        height: 4,
        width: 4,
        ..GpVideoSpec::oracle_default(4)
    };
    let v = vidinpaint_core::data::gp::GpDataset::new(spec).unwrap().sample(0);
    let mut r = rng::stream(4, 1);
    let bits: Vec<u8> = (0..5 * 16).map(|_| r.random_bool(0.5) as u8).collect();
    let m = PixelMask::from_bits(5, 4, 4, bits).unwrap();
    let schedule = NoiseSchedule::build(ScheduleKind::Cosine, 1000).unwrap();
    let eps: Vec<f64> = (0..v.shape().len()).map(|_| rng::box_muller(&mut r)).collect();
    let li = prepare_loss_input(&v, &m, &[1, 2, 3], &[0, 4], &schedule, 300, eps).unwrap();
    let (_, grad) = masked_loss_grad(&net, &li).unwrap();
    let h = 1e-4;
    let n_coords = 128;
    let mut worst: f64 = 0.0;
    for _ in 0..n_coords {
        let i = r.random_range(0..grad.len());
        let w0 = net.weights()[i];
        net.weights_mut()[i] = w0 + h;
        let up = masked_loss_grad(&net, &li).unwrap().0;
        net.weights_mut()[i] = w0 - h;
        let down = masked_loss_grad(&net, &li).unwrap().0;
        net.weights_mut()[i] = w0;
        let num = (up - down) / (2.0 * h);
        // the floor keeps coordinates whose gradient is ~0 from dividing
        // round-off by round-off
        let rel = (num - grad[i]).abs() / num.abs().max(grad[i].abs()).max(1e-6);
        worst = worst.max(rel);
    }
    ensure(
        worst < 1e-4,
        format!("{n_coords} coordinates of {} parameters, worst relative error {worst:.2e} < 1e-4", grad.len()),
    )
}

fn scheme_suite() -> Outcome {
    let mut checked = 0;
    let mut bad = vec![];
    for kind in SchemeKind::ALL {
        for n in [17, 31, 64, 200] {
            for k in [8, 16] {
                if k < kind.min_budget() {
                    continue;
                }
                match plan(kind, n, k) {
                    Ok(s) => {
                        let v = validate(&s);
                        if !v.is_empty() {
                            bad.push(format!("{kind:?}({n},{k}): {}", v[0]));
                        }
                        checked += 1;
                    }
                    Err(e) => bad.push(format!("{kind:?}({n},{k}): {e}")),
                }
            }
        }
    }
    let ar = plan(SchemeKind::Ar, 31, 8).unwrap();
    let first: Vec<usize> = ar.stages[0].x.iter().collect();
    let ar_ok = ar.stages.len() == 7 && first == (0..8).collect::<Vec<_>>();
    if !ar_ok {
        bad.push(format!("AR(31,8): {} stages, first latents {first:?}", ar.stages.len()));
    }
    ensure(
        bad.is_empty(),
        format!("{checked} plans valid, AR(31,8) has {} stages starting {first:?}; problems: {bad:?}", ar.stages.len()),
    )
}

fn training_smoke() -> Outcome {
    let cfg = TrainConfig::desk(5000, 2024);
    let t0 = Instant::now();
    let out = train_loop(&cfg, TrainState::new(&cfg).unwrap(), &mut |_| Ok(())).unwrap();
    let train_time = t0.elapsed();
    let losses: Vec<f64> = out.trace.iter().map(|r| r.loss).collect();
    let first = window_mean(&losses, 0..100);
    let last = window_mean(&losses, 4900..5000);

    let net = out.state.params.ema_network();
    let source = VideoSource::new(&cfg.data).unwrap();
    let scheme = plan(SchemeKind::Ar, cfg.data.frames(), cfg.budget).unwrap();
    let sampler = SamplerConfig {
        n_steps: 25,
        ..SamplerConfig::default()
    };
    let (mut model_psnr, mut copy_psnr) = (0.0, 0.0);
    let held_out = 20;
    for i in 0..held_out {
        let v = source.video(1_000_000 + i).unwrap();
        let s = v.shape();
        let m = generate_mask(&MaskSpec::random(rng::child_seed(31, i as u64)), s.frames, s.height, s.width).unwrap();
        let c = SamplerConfig {
            seed: rng::child_seed(32, i as u64),
            ..sampler.clone()
        };
        let out = inpaint(&v, &m, &scheme, &net, &c).unwrap();
        model_psnr += psnr(&v, &out, Some(&m)).unwrap() / held_out as f64;
        copy_psnr += psnr(&v, &copy_nearest_known(&v, &m).unwrap(), Some(&m)).unwrap() / held_out as f64;
    }
    let detail = format!(
        "loss {first:.4} -> {last:.4} (ratio {:.2} >= 2) in {:.0}s < 3600s; missing-region PSNR model {model_psnr:.2} dB vs copy baseline {copy_psnr:.2} dB over {held_out} videos (Heun 25 steps, AR K=8)",
        first / last,
        train_time.as_secs_f64()
    );
    ensure(
        first / last >= 2.0 && train_time < Duration::from_secs(3600) && model_psnr > copy_psnr,
        detail,
    )
}

fn known_pixels() -> Outcome {
    let arch = NetArch {
        width: 8,
        ..NetArch::default()
    };
    let net = perturbed_params(&arch, 7, 0.1).network();
    let mut r = rng::stream(7, 0);
    let mut failures = 0;
    let mut sampled = 0;
    for i in 0..100u64 {
        let kind = SchemeKind::ALL[r.random_range(0..SchemeKind::ALL.len())];
        let n = r.random_range(9..=40);
        let k = [4, 6, 8, 12][r.random_range(0..4)].max(kind.min_budget());
        let mut world = SpriteWorld::desk(i);
        world.frames = n;
        world.height = 8;
        world.width = 8;
        world.size = (2, 4);
        let v = gen_sprites(&world, 1).unwrap().videos.remove(0);
        let m = generate_mask(&MaskSpec::random(i), n, 8, 8).unwrap();
        let scheme = plan(kind, n, k).unwrap();
        let cfg = SamplerConfig {
            n_steps: 2,
            seed: i,
            ..SamplerConfig::default()
        };
        let out = inpaint(&v, &m, &scheme, &net, &cfg).unwrap();
        let s = v.shape();
        for f in 0..n {
            for q in 0..s.pixels() {
                let (y, x) = (q / s.width, q % s.width);
                if m.frame(f)[q] == 1 {
                    if out.get(f, 0, y, x).to_bits() != v.get(f, 0, y, x).to_bits() {
                        failures += 1;
                    }
                } else if out.get(f, 0, y, x) != v.get(f, 0, y, x) {
                    sampled += 1;
                }
            }
        }
    }
    ensure(
        failures == 0 && sampled > 0,
        format!("100 triples, {failures} known pixels changed, {sampled} missing pixels filled"),
    )
}

fn sigma_endpoints() -> Outcome {
    let g = SigmaGrid::build(0.002, 1000.0, 7.0, 100).unwrap();
    let ends = g.sigmas[0] == 1000.0 && g.sigmas[99] == 0.002 && g.sigmas[100] == 0.0;
    let grid_mono = g.sigmas.windows(2).all(|w| w[0] > w[1]);
    let sched_mono = [ScheduleKind::Cosine, ScheduleKind::Sigmoid].iter().all(|&k| {
        let s = NoiseSchedule::build(k, 1000).unwrap();
        (1..=1000).all(|t| s.alpha_bar(t) < s.alpha_bar(t - 1))
    });
    ensure(
        ends && grid_mono && sched_mono,
        format!(
            "sigmas[0]={} sigmas[99]={} sigmas[100]={}; grid decreasing {grid_mono}; cosine/sigmoid abar decreasing {sched_mono}",
            g.sigmas[0], g.sigmas[99], g.sigmas[100]
        ),
    )
}

fn run_cli(dir: &Path, args: &[&str]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_vidinpaint"))
        .args(["--json", "--seed", "11"])
        .args(args)
        .env("VIDINPAINT_OUT_DIR", dir)
        .current_dir(dir)
        .output()
        .unwrap();
    // a small oracle check may legitimately miss its thresholds (exit 1);
    // only its reproducibility matters here
    let allowed = out.status.success() || (args[0] == "oracle-check" && out.status.code() == Some(1));
    assert!(allowed, "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    let mut bytes = out.stdout;
    bytes.extend(format!("exit {:?}", out.status.code()).bytes());
    bytes
}

fn dir_digest(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn cli_determinism() -> Outcome {
    let mut world = SpriteWorld::desk(0);
    world.frames = 12;
    world.height = 8;
    world.width = 8;
    world.size = (2, 3);
    let mut train = TrainConfig::desk(6, 0);
    train.data = TrainData::Sprites(world);
    train.budget = 4;
    train.diffusion_steps = 100;
    train.checkpoint_every = Some(3);
    train.arch = NetArch {
        width: 8,
        max_frames: 8,
        ..NetArch::default()
    };
    let commands: Vec<Vec<&str>> = vec![
        vec!["gen-data", "--videos", "2", "--out", "gp.vt", "--kind", "gp"],
        vec!["gen-data", "--config", "data.json"],
        vec!["gen-masks", "--frames", "12", "--height", "8", "--width", "8", "--count", "2"],
        vec!["plan", "--kind", "lookahead_ar_pp", "--frames", "12", "--budget", "4", "--out", "plan.json", "--render", "plan.ppm"],
        vec!["train", "--config", "train.json"],
        vec!["inpaint", "--video", "videos.vt", "--mask", "masks.vt", "--checkpoint", "model.ckpt", "--scheme", "plan.json", "--steps", "3", "--trace", "trace.json"],
        vec!["inpaint", "--video", "gp.vt", "--mask", "gpmask.vt", "--oracle", "gp.json", "--kind", "ar", "--budget", "3", "--steps", "5", "--out", "gp_out.vt"],
        vec!["inpaint", "--video", "videos.vt", "--mask", "masks.vt", "--baseline", "--out", "copy.vt"],
        vec!["eval", "--truth", "videos.vt", "--pred", "inpainted.vt", "--mask", "masks.vt", "--flow", "flows.vt", "--per-video", "--csv", "eval.csv"],
        vec!["oracle-check", "--samples", "200", "--steps", "10"],
        vec!["schema", "train_config"],
    ];
    let runs: Vec<_> = (0..2)
        .map(|_| {
            let tmp = tempfile::tempdir().unwrap();
            let d = tmp.path().to_path_buf();
            let d = d.as_path();
            let data = serde_json::json!({"data": {"kind": "sprites", "frames": 12, "height": 8, "width": 8,
                "sprites": [1, 2], "size": [2, 3], "max_speed": 1, "background": [-0.8, -0.4],
                "intensity": [0.2, 1.0], "seed": 0}, "n_videos": 2});
            std::fs::write(d.join("data.json"), data.to_string()).unwrap();
            std::fs::write(d.join("train.json"), serde_json::to_string(&train).unwrap()).unwrap();
            let gp = GpVideoSpec::oracle_default(0);
            std::fs::write(d.join("gp.json"), serde_json::to_string(&gp).unwrap()).unwrap();
            let gm = vidinpaint_core::oracle_check::oracle_mask(5, 2, 2);
            gm.to_tensor().save(d.join("gpmask.vt")).unwrap();
            let stdout: Vec<Vec<u8>> = commands.iter().map(|c| run_cli(d, c)).collect();
            (tmp, stdout, dir_digest(d))
        })
        .collect();
    let mut diffs = vec![];
    for (c, (a, b)) in commands.iter().zip(runs[0].1.iter().zip(&runs[1].1)) {
        if a != b {
            diffs.push(format!("stdout of {}", c[0]));
        }
    }
    let (fa, fb) = (&runs[0].2, &runs[1].2);
    if fa.len() != fb.len() {
        diffs.push("file lists differ".into());
    }
    for ((na, ba), (nb, bb)) in fa.iter().zip(fb) {
        if na != nb || ba != bb {
            diffs.push(format!("file {na}"));
        }
    }
    ensure(
        diffs.is_empty(),
        format!(
            "{} commands run twice, {} output files compared; differences: {diffs:?}",
            commands.len(),
            fa.len()
        ),
    )
}

/// Direct, loop-based recomputation used as the metric reference.
fn reference_psnr(a: &Video, b: &Video) -> f64 {
    let n = a.data().len() as f64;
    let mse: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n;
    10.0 * (4.0 / mse).log10()
}

fn reference_ssim(a: &Video, b: &Video) -> f64 {
    let s = a.shape();
    let (c1, c2) = (0.02f64.powi(2), 0.06f64.powi(2));
    let (mut total, mut count) = (0.0, 0.0);
    for f in 0..s.frames {
        for c in 0..s.channels {
            for y0 in 0..=s.height - 8 {
                for x0 in 0..=s.width - 8 {
                    let px = |v: &Video| -> Vec<f64> {
                        (0..64).map(|i| v.get(f, c, y0 + i / 8, x0 + i % 8)).collect()
                    };
                    let (pa, pb) = (px(a), px(b));
                    let ma = pa.iter().sum::<f64>() / 64.0;
                    let mb = pb.iter().sum::<f64>() / 64.0;
                    let va = pa.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / 64.0;
                    let vb = pb.iter().map(|x| (x - mb).powi(2)).sum::<f64>() / 64.0;
                    let cov = pa.iter().zip(&pb).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / 64.0;
                    total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    count += 1.0;
                }
            }
        }
    }
    total / count
}

fn metric_oracles() -> Outcome {
    let world = SpriteWorld::desk(5);
    let ds = gen_sprites(&world, 4).unwrap();
    let mut worst_psnr: f64 = 0.0;
    let mut worst_ssim: f64 = 0.0;
    let mut r = rng::stream(5, 0);
    for v in &ds.videos {
        let mut b = v.clone();
        for x in b.data_mut() {
            *x += 0.1 * rng::box_muller(&mut r);
        }
        worst_psnr = worst_psnr.max((psnr(v, &b, None).unwrap() - reference_psnr(v, &b)).abs());
        worst_ssim = worst_ssim.max((ssim(v, &b).unwrap() - reference_ssim(v, &b)).abs());
    }
    let shape = VideoShape::new(3, 2, 9, 11);
    let a = Video::from_vec(shape, (0..shape.len()).map(|_| rng::box_muller(&mut r)).collect()).unwrap();
    let b = Video::from_vec(shape, (0..shape.len()).map(|_| rng::box_muller(&mut r)).collect()).unwrap();
    worst_psnr = worst_psnr.max((psnr(&a, &b, None).unwrap() - reference_psnr(&a, &b)).abs());
    worst_ssim = worst_ssim.max((ssim(&a, &b).unwrap() - reference_ssim(&a, &b)).abs());
    let warp: f64 = ds
        .videos
        .iter()
        .zip(&ds.flows)
        .map(|(v, f)| warp_error(v, f).unwrap())
        .fold(0.0, f64::max);
    ensure(
        worst_psnr < 1e-8 && worst_ssim < 1e-8 && warp == 0.0,
        format!("|PSNR - ref| {worst_psnr:.1e}, |SSIM - ref| {worst_ssim:.1e} (< 1e-8); sprite warp error {warp}"),
    )
}

fn main() {
    // criteria 1 and 2 share one oracle run
    let oracle = std::cell::OnceCell::new();
    let shared = || -> (OracleReport, Duration) {
        oracle
            .get_or_init(|| {
                let t0 = Instant::now();
                let r = oracle_check(&OracleCheckConfig::default()).unwrap();
                (r, t0.elapsed())
            })
            .clone()
    };
    let criteria: Vec<(&str, Box<dyn FnOnce() -> Outcome + '_>)> = vec![
        ("1 gaussian-oracle sampler fidelity", Box::new(|| {
            let (r, t) = shared();
            oracle_outcome(&r, false, t)
        })),
        ("2 marginalization equivalence", Box::new(|| {
            let (r, t) = shared();
            oracle_outcome(&r, true, t)
        })),
        ("3 NFE count", Box::new(nfe_count)),
        ("4 masked-loss gradient check", Box::new(gradient_check)),
        ("5 scheme invariant suite", Box::new(scheme_suite)),
        ("6 training smoke", Box::new(training_smoke)),
        ("7 known-pixel preservation", Box::new(known_pixels)),
        ("8 sigma grid endpoints", Box::new(sigma_endpoints)),
        ("9 CLI determinism", Box::new(cli_determinism)),
        ("10 metric oracles", Box::new(metric_oracles)),
    ];
    // optional filter: criterion numbers as free arguments
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        let number = name.split(' ').next().unwrap_or_default();
        if !only.is_empty() && !only.iter().any(|o| o == number) {
            continue;
        }
        let t0 = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t0.elapsed().as_secs_f64();
        match res {
            Ok(d) => println!("criterion {name}: PASS ({d}) [{secs:.1}s]"),
            Err(d) => {
                failed += 1;
                println!("criterion {name}: FAIL ({d}) [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
