use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ddtrx_core::abc::{summary_c, summary_sigma};
use ddtrx_core::generate::{sample_tree, simulate_data};
use ddtrx_core::mh::{mh_step, ChainState};
use ddtrx_core::summaries::project_ultrametric;
use ddtrx_core::tree::{build_cov_ordered, log_likelihood};
use ddtrx_core::RngSeed;
use nalgebra::DMatrix;

fn likelihood(c: &mut Criterion) {
    let mut group = c.benchmark_group("log_likelihood");
    for n in [8, 32, 128] {
        let mut rng = RngSeed(1).rng();
        let tree = sample_tree(n, 1.0, &mut rng).unwrap();
        let data = ddtrx_core::generate::diffuse(&tree, 0.5, 10, &mut rng).unwrap().data;
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| log_likelihood(black_box(&data), black_box(&tree), 0.5).unwrap())
        });
    }
    group.finish();
}

fn summaries(c: &mut Criterion) {
    let data = simulate_data(50, 10, 1.0, 0.5, &mut RngSeed(2).rng());
    c.bench_function("summary_c/50x10", |b| b.iter(|| summary_c(black_box(&data)).unwrap()));
    c.bench_function("summary_sigma/50x10", |b| b.iter(|| summary_sigma(black_box(&data)).unwrap()));
    c.bench_function("simulate_data/50x10", |b| {
        let mut rng = RngSeed(3).rng();
        b.iter(|| simulate_data(50, 10, 1.0, 0.5, &mut rng))
    });
}

fn mh(c: &mut Criterion) {
    let mut rng = RngSeed(4).rng();
    let tree = sample_tree(20, 1.0, &mut rng).unwrap();
    let data = ddtrx_core::generate::diffuse(&tree, 0.5, 10, &mut rng).unwrap().data;
    let state = ChainState::new(tree, &data, 1.0, 0.5).unwrap();
    c.bench_function("mh_step/20x10", |b| {
        let mut rng = RngSeed(5).rng();
        b.iter(|| mh_step(black_box(&state), &data, 1.0, 0.5, &mut rng).unwrap())
    });
}

fn projection(c: &mut Criterion) {
    let mut group = c.benchmark_group("project_ultrametric");
    for n in [5, 7, 20] {
        let tree = sample_tree(n, 1.0, &mut RngSeed(6).rng()).unwrap();
        let labels = tree.leaf_labels();
        let cov = build_cov_ordered(&tree, &labels).unwrap();
        let m = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { (cov.get(i, j) + 0.05 * ((i * j) % 3) as f64).min(1.0) });
        let m = (&m + m.transpose()) * 0.5;
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| project_ultrametric(black_box(&m), &labels).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, likelihood, summaries, mh, projection);
criterion_main!(benches);
