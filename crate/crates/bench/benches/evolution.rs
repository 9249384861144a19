use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use tracklab_core::{find, run_simulation, step_pde, NoopObserver};

/// One RK4 step on representative catalog grids (256-node circle sections
/// with one to two fiber components and varying reaction terms).
fn bench_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("pde_step");
    for name in ["S1", "S3", "S4"] {
        let scenario = find(name).unwrap();
        let config = scenario.build_pde().unwrap();
        let state = config.initial_section().clone();
        group.bench_with_input(BenchmarkId::from_parameter(name), &config, |b, config| {
            b.iter(|| black_box(step_pde(config, black_box(&state)).unwrap()));
        });
    }
    group.finish();
}

/// Full horizon integration of the shortest catalog run.
fn bench_full_run(c: &mut Criterion) {
    let scenario = find("S5").unwrap();
    let config = scenario.build_pde().unwrap();
    let mut group = c.benchmark_group("pde_run");
    group.sample_size(20);
    group.bench_function("S5", |b| {
        b.iter(|| black_box(run_simulation(&config, &mut NoopObserver).unwrap()))
    });
    group.finish();
}

criterion_group!(benches, bench_step, bench_full_run);
criterion_main!(benches);
