use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rkl::edmd::{fit_edmd_with, KoopmanModel};
use rkl::observables::BasisSpec;
use rkl::rls::RlsState;

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn update_vs_refit(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let dim = 30;
    let mut group = c.benchmark_group("n30");
    group.sample_size(20);
    for samples in [1_000usize, 10_000, 100_000] {
        let y = random(dim, samples, &mut rng);
        let ybar = random(dim, samples, &mut rng);
        group.bench_with_input(BenchmarkId::new("edmd_refit", samples), &samples, |b, _| {
            b.iter(|| black_box(fit_edmd_with(&y, &ybar, 0.0, false).unwrap()))
        });

        let fit = fit_edmd_with(&y, &ybar, 0.0, false).unwrap();
        let state = RlsState::new(KoopmanModel {
            k: fit.k,
            p: fit.p,
            n_z: dim - 2,
            n_g: 2,
            basis_state: BasisSpec::Identity { n_x: dim - 2 },
            basis_control: BasisSpec::Identity { n_x: 2 },
            dt: 1.0,
            sample_count: samples,
        })
        .unwrap();
        let alpha = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
        let beta = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
        group.bench_with_input(BenchmarkId::new("rls_update", samples), &samples, |b, _| {
            b.iter_batched_ref(
                || state.clone(),
                |s| s.update_lifted(&alpha, &beta).unwrap(),
                BatchSize::SmallInput,
            )
        });
    }
    group.finish();
}

criterion_group!(benches, update_vs_refit);
criterion_main!(benches);
