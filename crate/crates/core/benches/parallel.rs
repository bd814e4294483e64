use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rkl::config::{ControllerKind, InitialDataset, RunConfig, UpdateMode};
use rkl::edmd::gram_products;
use rkl::par;
use rkl::pipeline::run_episode;

fn episodes(c: &mut Criterion) {
    let cfg = RunConfig {
        controller: ControllerKind::Lqr,
        update_mode: UpdateMode::Rkl,
        initial: InitialDataset::Random(300),
        episode_length: 100,
        seeds: (0..4).collect(),
        ..RunConfig::default()
    };
    let mut group = c.benchmark_group("episodes_4_seeds");
    group.sample_size(10);
    group.bench_function("sequential", |b| {
        b.iter(|| par::map_sequential(&cfg.seeds, |&s| run_episode(&cfg, s).map(|r| r.rmse)))
    });
    group.bench_function("parallel", |b| {
        b.iter(|| par::map(&cfg.seeds, |&s| run_episode(&cfg, s).map(|r| r.rmse)))
    });
    group.finish();
}

fn gram(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut group = c.benchmark_group("gram_products");
    group.sample_size(10);
    for cols in [20_000usize, 100_000] {
        let y = DMatrix::from_fn(30, cols, |_, _| rng.random_range(-1.0..1.0));
        let ybar = DMatrix::from_fn(30, cols, |_, _| rng.random_range(-1.0..1.0));
        group.bench_with_input(BenchmarkId::new("sequential", cols), &cols, |b, _| {
            b.iter(|| black_box(gram_products(&y, &ybar, false)))
        });
        group.bench_with_input(BenchmarkId::new("parallel", cols), &cols, |b, _| {
            b.iter(|| black_box(gram_products(&y, &ybar, true)))
        });
    }
    group.finish();
}

criterion_group!(benches, episodes, gram);
criterion_main!(benches);
