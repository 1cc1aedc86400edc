use criterion::{black_box, criterion_group, criterion_main, Criterion, Throughput};

use walrelay_core::scenario::{FaultEvent, FaultKind, FaultTime, Scenario};
use walrelay_core::sim::run_scenario;

fn simulated_delivery(c: &mut Criterion) {
    let fault_free = Scenario {
        entries: 200,
        targets: 4,
        dummy_interval: Some(10),
        ..Scenario::default()
    };
    let mut crashy = fault_free.clone();
    crashy.faults = vec![
        FaultEvent {
            at: FaultTime::Step(120),
            kind: FaultKind::Down(1),
        },
        FaultEvent {
            at: FaultTime::Step(360),
            kind: FaultKind::Up(1),
        },
    ];

    let mut group = c.benchmark_group("sim");
    group.throughput(Throughput::Elements(200));
    group.bench_function("fault_free_200x4", |b| {
        let mut seed = 0u64;
        b.iter(|| {
            seed += 1;
            black_box(run_scenario(&fault_free, seed).passed())
        })
    });
    group.bench_function("crash_recover_200x4", |b| {
        let mut seed = 0u64;
        b.iter(|| {
            seed += 1;
            black_box(run_scenario(&crashy, seed).passed())
        })
    });
    group.finish();
}

criterion_group!(benches, simulated_delivery);
criterion_main!(benches);
