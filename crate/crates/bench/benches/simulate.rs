use criterion::{criterion_group, criterion_main, Criterion};
use exante_bench::line_market;
use exante_core::builder::solve_multiplier;
use exante_core::simulator::{run_episode, Controller, EpisodeConfig, Market};
use std::hint::black_box;

fn simulate(c: &mut Criterion) {
    let (mech, model, space) = line_market(101, 21, 0.12);
    let config = EpisodeConfig {
        rounds: 100_000,
        seed: 1,
        controller: Controller::LinearMultiplier(mech.r),
        trace: false,
    };
    let market = Market::Menu(mech.clone());
    c.bench_function("episode/100k_rounds", |b| {
        b.iter(|| run_episode(black_box(&config), &market, &model, &space).unwrap())
    });
    c.bench_function("solve_multiplier/101x21", |b| {
        b.iter(|| solve_multiplier(black_box(mech.menu.clone()), &model, &space, 1e-12).unwrap())
    });
}

criterion_group!(benches, simulate);
criterion_main!(benches);
