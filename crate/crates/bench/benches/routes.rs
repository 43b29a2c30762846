use criterion::{criterion_group, criterion_main, Criterion};
use refrag_bench::{canonical, tabulated};
use refrag_core::pde::{self, PdeState, TimeScheme};
use refrag_core::pdmp::{self, JumpProposal, LScheme};
use refrag_core::{spectral, Grid, ProfileDensity};
use std::hint::black_box;

fn spectral_benches(c: &mut Criterion) {
    let (p, k) = canonical();
    c.bench_function("malthus/monomial", |b| b.iter(|| spectral::malthus(black_box(&p), &k).unwrap()));
    c.bench_function("l_function/monomial", |b| b.iter(|| spectral::l_function(&p, &k, black_box(0.5)).unwrap()));
    let (pt, kt) = tabulated(1001);
    c.bench_function("malthus/tabulated_1001", |b| b.iter(|| spectral::malthus(black_box(&pt), &kt).unwrap()));
}

fn profile_benches(c: &mut Criterion) {
    let (p, k) = canonical();
    c.bench_function("profile/build_monomial", |b| b.iter(|| ProfileDensity::build(black_box(&p), &k).unwrap()));
    let (pt, kt) = tabulated(101);
    let mut group = c.benchmark_group("profile");
    group.sample_size(10);
    group.bench_function("build_tabulated_101", |b| b.iter(|| ProfileDensity::build(black_box(&pt), &kt).unwrap()));
    group.finish();
}

fn pde_benches(c: &mut Criterion) {
    let (p, k) = canonical();
    let grid = Grid::new(1e-4, 1e4, 4096).unwrap();
    let op = pde::build_operator(&grid, &p, &k).unwrap();
    let state = PdeState::delta(&grid, 1.0).unwrap();
    let dt = 0.9 * op.cfl_bound();
    c.bench_function("pde/euler_step_4096", |b| b.iter(|| pde::step(&op, black_box(&state), dt, TimeScheme::Euler).unwrap()));
    c.bench_function("pde/heun_step_4096", |b| b.iter(|| pde::step(&op, black_box(&state), dt, TimeScheme::Heun).unwrap()));
    c.bench_function("pde/build_operator_4096", |b| b.iter(|| pde::build_operator(black_box(&grid), &p, &k).unwrap()));
}

fn monte_carlo_benches(c: &mut Criterion) {
    let (p, k) = canonical();
    let mut group = c.benchmark_group("monte_carlo");
    group.sample_size(10);
    group.bench_function("feynman_kac_10k", |b| {
        b.iter(|| pdmp::feynman_kac(&p, &k, |x| x, 5.0, 1.0, black_box(10_000), JumpProposal::Exact, 1).unwrap())
    });
    group.bench_function("estimate_l_10k", |b| {
        b.iter(|| pdmp::estimate_l(&p, &k, 0.5, black_box(10_000), None, LScheme::Auto, 1).unwrap())
    });
    group.finish();
}

criterion_group!(benches, spectral_benches, profile_benches, pde_benches, monte_carlo_benches);
criterion_main!(benches);
