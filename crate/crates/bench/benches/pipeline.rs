use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use vidinpaint_bench::{desk_network, desk_video};
use vidinpaint_core::data::gp::GpDataset;
use vidinpaint_core::data::GpVideoSpec;
use vidinpaint_core::oracle_check::oracle_mask;
use vidinpaint_core::sampler::sample_stage;
use vidinpaint_core::schedule::NoiseSchedule;
use vidinpaint_core::schemes::plan;
use vidinpaint_core::train::{masked_loss_grad, prepare_loss_input};
use vidinpaint_core::{rng, DenoiserInput, GaussianOracle, SamplerConfig, ScheduleKind, SchemeKind};

fn network(c: &mut Criterion) {
    let net = desk_network(1);
    let (v, m) = desk_video(1);
    let x: Vec<usize> = (0..4).collect();
    let y: Vec<usize> = (4..8).collect();
    let schedule = NoiseSchedule::build(ScheduleKind::Cosine, 1000).unwrap();
    let mut r = rng::stream(1, 2);
    let eps = (0..8 * v.shape().frame_len()).map(|_| rng::box_muller(&mut r)).collect();
    let li = prepare_loss_input(&v, &m, &x, &y, &schedule, 500, eps).unwrap();
    let input = DenoiserInput {
        frames: &li.frames,
        mask: &li.mask,
        positions: &li.positions,
        sigma: li.sigma,
    };
    c.bench_function("network forward, 8 frames 16x16", |b| {
        b.iter(|| black_box(net.forward(black_box(&input)).unwrap()))
    });
    c.bench_function("masked loss + backward, 8 frames 16x16", |b| {
        b.iter(|| black_box(masked_loss_grad(&net, black_box(&li)).unwrap()))
    });
}

fn sampler(c: &mut Criterion) {
    let spec = GpVideoSpec::oracle_default(0);
    let oracle = GaussianOracle::new(&spec).unwrap();
    let v = GpDataset::new(spec).unwrap().sample(0);
    let m = oracle_mask(5, 2, 2);
    let cfg = SamplerConfig::default();
    c.bench_function("heun 100 steps, oracle, 5x2x2", |b| {
        b.iter(|| black_box(sample_stage(&oracle, &v, &m, &[1, 2, 3], &[0, 4], &cfg).unwrap()))
    });
}

fn planning(c: &mut Criterion) {
    c.bench_function("plan multires-ar-3 N=200 K=16", |b| {
        b.iter(|| black_box(plan(SchemeKind::MultiresAr3, black_box(200), 16).unwrap()))
    });
}

criterion_group!(benches, network, sampler, planning);
criterion_main!(benches);
