use std::sync::Arc;

use criterion::{black_box, criterion_group, criterion_main, Criterion, Throughput};

use walrelay_core::queue::{Message, Mutation, TargetQueue};

fn push_drain(c: &mut Criterion) {
    let payload: Arc<[u8]> = Arc::from(vec![7u8; 1024]);
    let mut group = c.benchmark_group("queue");
    group.throughput(Throughput::Elements(1024));
    group.bench_function("push_drain_1k_batch8", |b| {
        b.iter(|| {
            let mut q = TargetQueue::new(Mutation::None);
            for i in 1..=1024u64 {
                q.push(Message::new(i, payload.clone()), true, 0);
            }
            let mut total = 0usize;
            loop {
                let batch = q.drain_batch(8);
                if batch.is_empty() {
                    break;
                }
                total += batch.len();
            }
            black_box(total)
        })
    });
    group.finish();
}

criterion_group!(benches, push_drain);
criterion_main!(benches);
