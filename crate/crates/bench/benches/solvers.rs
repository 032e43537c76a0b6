use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use mfpc_core::hjb::{extract_policy, solve_value};
use mfpc_core::mfg::{default_initial_density, solve_fpk, solve_mfg};
use mfpc_core::{ConstantPolicy, Efficiency, GameParams, Grid, GridSpec, InterferencePath, MfgOptions};

fn efficiency(c: &mut Criterion) {
    let exp = Efficiency::exponential(1.0).unwrap();
    let sig = Efficiency::sigmoid(100).unwrap();
    c.bench_function("profile/exponential", |b| b.iter(|| black_box(exp).profile().unwrap()));
    c.bench_function("profile/sigmoid-100", |b| b.iter(|| black_box(sig).profile().unwrap()));
    let profile = sig.profile().unwrap();
    let tmax = profile.theta_max().value;
    c.bench_function("hamiltonian/sigmoid-100", |b| {
        b.iter(|| profile.hamiltonian(black_box(1.3), black_box(0.4 * tmax), 1.0, 10.0))
    });
}

fn grid_solvers(c: &mut Criterion) {
    let params = GameParams::benchmark();
    let grid = Grid::new(GridSpec::default(), &params).unwrap();
    let path = InterferencePath::Constant(0.5);
    let m0 = default_initial_density(&grid, &params).unwrap();
    let mut group = c.benchmark_group("grid");
    group.sample_size(10);
    group.bench_function("hjb-solve", |b| b.iter(|| solve_value(&params, &path, &grid).unwrap()));
    let value = solve_value(&params, &path, &grid).unwrap();
    let policy = extract_policy(&value, &params, &path).unwrap();
    group.bench_function("fpk-solve", |b| {
        b.iter(|| solve_fpk(&policy, &m0, &grid, &path).unwrap())
    });
    group.bench_function("fpk-solve-constant", |b| {
        b.iter(|| solve_fpk(&ConstantPolicy(0.5), &m0, &grid, &path).unwrap())
    });
    let one_step = MfgOptions {
        max_iter: 1,
        ..MfgOptions::default()
    };
    group.bench_function("mfg-iteration", |b| {
        b.iter(|| solve_mfg(&params, &grid, &m0, &one_step).unwrap())
    });
    group.finish();
}

criterion_group!(benches, efficiency, grid_solvers);
criterion_main!(benches);
