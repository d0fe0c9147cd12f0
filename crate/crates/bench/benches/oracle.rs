use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use exante_bench::broken_payoffs;
use exante_core::characterizer::characterize_payoffs;
use exante_core::model::Tolerances;
use exante_core::oracle::{exhaustive_best_response, solve_best_response, ExhaustiveOptions, OracleOptions};
use std::hint::black_box;

fn oracle(c: &mut Criterion) {
    let mut group = c.benchmark_group("best_response");
    for n in [25, 100, 400] {
        let p = broken_payoffs(n);
        group.bench_with_input(BenchmarkId::new("lp", n), &p, |b, p| {
            b.iter(|| solve_best_response(black_box(p), &OracleOptions::default()).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("characterize", n), &p, |b, p| {
            b.iter(|| characterize_payoffs(black_box(p), &Tolerances::default()))
        });
    }
    let p = broken_payoffs(6);
    group.bench_function("exhaustive/6", |b| {
        b.iter(|| exhaustive_best_response(black_box(&p), &ExhaustiveOptions::default()).unwrap())
    });
    group.finish();
}

criterion_group!(benches, oracle);
criterion_main!(benches);
