use criterion::{criterion_group, criterion_main, Criterion};

use nudgeforge_core::simulator::{ScenarioConfig, SimOutput};
use nudgeforge_core::sweep::sweep_sequential;

fn small_scenario() -> ScenarioConfig {
    ScenarioConfig {
        n_pharmacies: 40,
        catalog_size: 100,
        days: 14,
        warmup_days: 7,
        effect_delta: 0.1,
        ..ScenarioConfig::default()
    }
}

fn events(_: u64, out: SimOutput) -> usize {
    out.platform.log().lines().len()
}

fn bench_sweep(c: &mut Criterion) {
    let cfg = small_scenario();
    let seeds: Vec<u64> = (1..=8).collect();
    let mut group = c.benchmark_group("sweep_8_seeds");
    group.sample_size(10);
    group.bench_function("sequential", |b| b.iter(|| sweep_sequential(&cfg, &seeds, events).unwrap()));
    #[cfg(feature = "parallel")]
    group.bench_function("parallel", |b| {
        b.iter(|| nudgeforge_core::sweep::sweep_parallel(&cfg, &seeds, events).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_sweep);
criterion_main!(benches);
