use std::hint::black_box;

use boxcal::{
    associate, build_affinity, build_feature_clouds, calibrate, pair_hypothesis, solve_assignment,
    weighted_kabsch, CalibrationConfig, ODistParams, TopK,
};
use boxcal_bench::fixture;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn hypothesis(c: &mut Criterion) {
    let pair = fixture(15, 1);
    let (e, k) = (&pair.ego.boxes[0], &pair.coop.boxes[0]);
    c.bench_function("pair_hypothesis", |b| {
        b.iter(|| pair_hypothesis(black_box(e), black_box(k)))
    });
}

fn affinity(c: &mut Criterion) {
    let params = ODistParams::default();
    let mut group = c.benchmark_group("build_affinity");
    for n in [5, 15, 25] {
        let pair = fixture(n, 2);
        group.bench_with_input(BenchmarkId::from_parameter(n), &pair, |b, p| {
            b.iter(|| build_affinity(black_box(&p.ego), black_box(&p.coop), &params))
        });
    }
    group.finish();
}

fn assignment(c: &mut Criterion) {
    let pair = fixture(15, 3);
    let m = build_affinity(&pair.ego, &pair.coop, &ODistParams::default());
    c.bench_function("solve_assignment/15x15", |b| {
        b.iter(|| solve_assignment(black_box(&m)))
    });
}

fn registration(c: &mut Criterion) {
    let pair = fixture(15, 4);
    let matches = associate(&pair.ego, &pair.coop, &ODistParams::default()).unwrap();
    let clouds = build_feature_clouds(&matches, &pair.ego, &pair.coop).unwrap();
    c.bench_function("weighted_kabsch/15", |b| {
        b.iter(|| weighted_kabsch(black_box(&clouds)))
    });
}

fn pipeline(c: &mut Criterion) {
    let mut group = c.benchmark_group("calibrate");
    let pair = fixture(25, 5);
    for k in [TopK::Largest(15), TopK::Largest(25)] {
        let cfg = CalibrationConfig {
            top_k: k,
            ..CalibrationConfig::default()
        };
        group.bench_with_input(BenchmarkId::new("top_k", k), &cfg, |b, cfg| {
            b.iter(|| calibrate(black_box(&pair.ego), black_box(&pair.coop), cfg))
        });
    }
    group.finish();
}

criterion_group!(
    benches,
    hypothesis,
    affinity,
    assignment,
    registration,
    pipeline
);
criterion_main!(benches);
