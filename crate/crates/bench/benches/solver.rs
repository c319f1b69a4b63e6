use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use padic_ground::recurrence::green_series;
use padic_ground::spectral::{find_ground_state_radial, q_matrix};
use padic_ground::walk::simulate_walk;
use padic_ground::{
    find_ground_state, fourier_radial, green_kernel, power_iteration, PowerOptions,
    SolverTolerances, WalkConfig,
};
use padic_ground_bench::*;

fn fourier(c: &mut Criterion) {
    let a = standard_profile();
    c.bench_function("fourier_radial/2-adic/-20..40", |b| {
        b.iter(|| fourier_radial(black_box(&a), -20, 40).unwrap())
    });
}

fn kernel_and_q(c: &mut Criterion) {
    let a = standard_profile();
    let mut group = c.benchmark_group("kernel");
    for mk in [3, 4, 5] {
        let g = grid(2, 1, mk, mk);
        let dual = kernel_dual(&a, &g);
        group.bench_with_input(BenchmarkId::new("green_kernel", mk), &g, |b, g| {
            b.iter(|| green_kernel(&dual, black_box(0.7), g, g.m() + 48, 1e-12).unwrap())
        });
        let k = kernel(&a, &g, 0.7);
        let v = unit_ball_potential(g);
        group.bench_with_input(BenchmarkId::new("q_matrix", mk), &k, |b, k| {
            b.iter(|| q_matrix(k, &v).unwrap())
        });
        let q = q_matrix(&k, &v).unwrap();
        group.bench_with_input(BenchmarkId::new("spectral_radius", mk), &q, |b, q| {
            b.iter(|| power_iteration(q.matrix(), &PowerOptions::default()).unwrap())
        });
    }
    group.finish();
}

fn ground_state(c: &mut Criterion) {
    let a = standard_profile();
    let tol = SolverTolerances::default();
    let mut group = c.benchmark_group("ground_state");
    group.sample_size(20);
    for mk in [3, 4] {
        let v = unit_ball_potential(grid(2, 1, mk, mk));
        group.bench_with_input(BenchmarkId::new("full", mk), &v, |b, v| {
            b.iter(|| find_ground_state(&a, v, &tol).unwrap())
        });
    }
    for mk in [8, 32] {
        let v = radial_unit_ball(2, 1, mk, mk);
        group.bench_with_input(BenchmarkId::new("radial", mk), &v, |b, v| {
            b.iter(|| find_ground_state_radial(&a, v, mk, &tol).unwrap())
        });
    }
    group.finish();
}

fn returns(c: &mut Criterion) {
    let a = standard_profile();
    let dual = fourier_radial(&a, 0, 8).unwrap();
    c.bench_function("green_series/1000", |b| {
        b.iter(|| green_series(black_box(&dual), 0, 1000).unwrap())
    });
    let mut group = c.benchmark_group("walk");
    group.sample_size(10);
    group.bench_function("simulate/20x10000", |b| {
        let config = WalkConfig::new(a.clone(), 20, 10_000, 0, 1);
        b.iter(|| simulate_walk(black_box(&config)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, fourier, kernel_and_q, ground_state, returns);
criterion_main!(benches);
