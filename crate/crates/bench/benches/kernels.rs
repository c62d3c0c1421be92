use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion};
use nskqg_bench::fixture;
use nskqg_core::Parity;

fn fft(c: &mut Criterion) {
    let mut g = c.benchmark_group("fft_round_trip");
    for n in [32, 64] {
        let (grid, _, _) = fixture(n);
        let f = grid.sample(Parity::Even, |x, y, z| (x + 2.0 * y).sin() * (3.0 * z).cos());
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| grid.inverse(&grid.forward(&f).unwrap()).unwrap())
        });
    }
    g.finish();
}

fn propagator_table(c: &mut Criterion) {
    let mut g = c.benchmark_group("propagator_table");
    g.sample_size(10);
    for n in [32, 64] {
        let (_, solver, _) = fixture(n);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter_batched(|| solver_clone(&solver), |mut s| s.propagator_table(1e-3), BatchSize::LargeInput)
        });
    }
    g.finish();
}

fn solver_clone(s: &nskqg_core::Solver) -> nskqg_core::Solver {
    nskqg_core::Solver::new(s.grid().clone(), *s.params()).unwrap()
}

fn nonlinear_rhs(c: &mut Criterion) {
    let mut g = c.benchmark_group("nonlinear_rhs");
    g.sample_size(10);
    for n in [32, 64] {
        let (_, solver, st) = fixture(n);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| solver.nonlinear_rhs(&st).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, fft, propagator_table, nonlinear_rhs);
criterion_main!(benches);
