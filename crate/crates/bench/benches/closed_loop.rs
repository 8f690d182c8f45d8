use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use pramloop_bench::{cohort, reference_strategies, validation};
use pramloop_core::controller::DobController;
use pramloop_core::metrics::{compute_metrics, GlucoseSource};
use pramloop_core::{batch_run, run_closed_loop, Mode, RunSettings, SimConfig, StrategyConfig};

fn controller_step(c: &mut Criterion) {
    let p = &cohort().unwrap()[0];
    let mut ctl = DobController::new(p.controller, p.g_b, p.u_b, p.cir, 5.0).unwrap();
    let mut k = 0u32;
    c.bench_function("controller_step", |b| {
        b.iter(|| {
            k = k.wrapping_add(1);
            let cgm = p.g_b + 30.0 * (f64::from(k % 288) / 288.0 * std::f64::consts::TAU).sin();
            black_box(ctl.controller_step(black_box(cgm), 0.0).unwrap())
        })
    });
}

fn single_run(c: &mut Criterion) {
    let cohort = cohort().unwrap();
    let scenario = validation().unwrap();
    let mut group = c.benchmark_group("closed_loop_14_days");
    for s in [StrategyConfig::s2(10.0), StrategyConfig::bare(Mode::InsMa)] {
        let cfg = SimConfig {
            patient: &cohort[0],
            subject: 0,
            strategy: s,
            scenario: &scenario,
            settings: RunSettings::new(42),
        };
        group.bench_function(s.mode.as_str(), |b| {
            b.iter(|| black_box(run_closed_loop(&cfg).unwrap()))
        });
    }
    group.finish();
}

fn validation_batch(c: &mut Criterion) {
    let cohort = cohort().unwrap();
    let scenario = validation().unwrap();
    let strategies = reference_strategies();
    let mut group = c.benchmark_group("validation_batch");
    group.sample_size(10);
    group.bench_function("70_runs_with_metrics", |b| {
        b.iter(|| {
            let runs = batch_run(&cohort, &strategies, &scenario, &RunSettings::new(42)).unwrap();
            let metrics: Vec<_> = runs
                .values()
                .map(|r| compute_metrics(r.as_ref().unwrap(), GlucoseSource::Cgm).unwrap())
                .collect();
            black_box(metrics)
        })
    });
    group.finish();
}

criterion_group!(benches, controller_step, single_run, validation_batch);
criterion_main!(benches);
