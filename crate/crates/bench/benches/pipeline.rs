use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use spade_bench::{fitted_dual, ideal_dual, noiseless_series, scene};
use spade_core::fisher::{NoiseConfig, SceneGrid};
use spade_core::*;

fn forward(c: &mut Criterion) {
    let ideal = ideal_dual();
    let fitted = fitted_dual();
    let s = scene();
    c.bench_function("mu_and_jacobian/ideal", |b| b.iter(|| ideal.mu_and_jacobian(black_box(&s)).unwrap()));
    c.bench_function("mu_and_jacobian/fitted", |b| b.iter(|| fitted.mu_and_jacobian(black_box(&s)).unwrap()));
}

fn fisher(c: &mut Criterion) {
    let model = ideal_dual();
    let s = scene();
    let budget = PhotonBudget::new(1e11).unwrap();
    c.bench_function("fim_shot_noise", |b| b.iter(|| fim_shot_noise(&model, black_box(&s), budget).unwrap()));
    let grid = SceneGrid::fig1().scenes().unwrap();
    let mut group = c.benchmark_group("sweep");
    group.sample_size(10);
    group.bench_function("fig1_grid", |b| {
        b.iter(|| crb_sweep(&model, black_box(&grid), &NoiseConfig::ShotNoise(budget)).unwrap())
    });
    group.finish();
}

fn estimation(c: &mut Criterion) {
    let model = fitted_dual();
    let s = scene();
    let series = noiseless_series(&model, &s, 1);
    let y = series.bins()[0].clone();
    let cov = NoiseCovariance::identity(model.n_modes());
    let config = OptimizerConfig::default();
    let mut group = c.benchmark_group("estimate");
    group.sample_size(10);
    group.bench_function("one_bin", |b| b.iter(|| estimate(&model, black_box(&y), &cov, &config).unwrap()));
    group.finish();
}

criterion_group!(benches, forward, fisher, estimation);
criterion_main!(benches);
