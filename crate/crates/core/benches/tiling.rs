use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use outpaint_core::denoiser::{Condition, DenoiseMode, DenoiserConfig, ToyDenoiser};
use outpaint_core::exec::Executor;
use outpaint_core::rng;
use outpaint_core::tiling::{blend_with, Tile, TiledSampler, TilingConfig};
use outpaint_core::video::{MaskVideo, VideoTensor};

fn executors() -> Vec<(&'static str, Executor)> {
    vec![
        ("sequential", Executor::sequential()),
        ("parallel", Executor::parallel()),
    ]
}

fn tiling() -> TilingConfig {
    TilingConfig {
        temporal: 16,
        temporal_overlap: 4,
        spatial: 32,
        spatial_overlap: 8,
    }
}

fn tiled_step(c: &mut Criterion) {
    let x = rng::gaussian(48, 64, 64, 3, 1, 1)
        .map(|v| (0.3 * v).clamp(-1.0, 1.0))
        .unwrap();
    let mask = MaskVideo::from_fn(48, 64, 64, |_, _, x| x >= 32);
    let cond = Condition::masked(&x, &mask).unwrap();
    let plan = tiling().spatiotemporal_plan(x.extent()).unwrap();
    let toy = ToyDenoiser::new(DenoiserConfig::default()).unwrap();
    let z = rng::gaussian_like(&x, 2, 2);
    let mut group = c.benchmark_group("tiled_step");
    group.sample_size(20);
    for (name, ex) in executors() {
        let sampler = TiledSampler::new(&toy, &cond, &plan, DenoiseMode::Dense, ex).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(name), &z, |b, z| {
            b.iter(|| sampler.step(black_box(z), 0.5, 0.475).unwrap())
        });
    }
    group.finish();
}

fn tiled_prepare(c: &mut Criterion) {
    let x = rng::gaussian(48, 64, 64, 3, 3, 3)
        .map(|v| (0.3 * v).clamp(-1.0, 1.0))
        .unwrap();
    let mask = MaskVideo::from_fn(48, 64, 64, |_, _, x| x >= 32);
    let cond = Condition::masked(&x, &mask).unwrap();
    let plan = tiling().spatiotemporal_plan(x.extent()).unwrap();
    let toy = ToyDenoiser::new(DenoiserConfig::default()).unwrap();
    let mut group = c.benchmark_group("tiled_prepare");
    group.sample_size(10);
    for (name, ex) in executors() {
        group.bench_function(name, |b| {
            b.iter(|| {
                TiledSampler::new(
                    &toy,
                    black_box(&cond),
                    &plan,
                    DenoiseMode::Dense,
                    ex.clone(),
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

fn blend_only(c: &mut Criterion) {
    let extent = outpaint_core::Extent::new(48, 128, 128);
    let plan = tiling().spatiotemporal_plan(extent).unwrap();
    let outs: Vec<(Tile, VideoTensor)> = plan
        .tiles
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let e = t.extent();
            (
                *t,
                rng::gaussian(e.frames, e.height, e.width, 3, 4, i as u64),
            )
        })
        .collect();
    let mut group = c.benchmark_group("blend");
    group.sample_size(20);
    for (name, ex) in executors() {
        group.bench_function(name, |b| {
            b.iter(|| blend_with(black_box(&outs), &plan, &ex).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, tiled_step, tiled_prepare, blend_only);
criterion_main!(benches);
