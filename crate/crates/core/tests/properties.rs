//! Property tests for the queue state machine and the wire types.

use std::sync::Arc;

use proptest::prelude::*;

use walrelay_core::queue::{Message, Mutation, PushOutcome, QueueState, TargetQueue};
use walrelay_core::scenario::Scenario;
use walrelay_core::transport::{CompletionTag, TagKind};

/// Random queue driver: pushes with ascending indexes per lane, drains,
/// suspends, reconnects, completes fetching — mirroring what the engine can
/// legally do to a queue.
#[derive(Debug, Clone)]
enum Op {
    PushNormal,
    PushRecovery { stale: bool },
    Drain { max: usize },
    Suspend,
    Reconnect,
    FetchingCompleted { stale: bool },
}

fn op_strategy() -> impl Strategy<Value = Op> {
    prop_oneof![
        4 => Just(Op::PushNormal),
        2 => any::<bool>().prop_map(|stale| Op::PushRecovery { stale }),
        3 => (1usize..6).prop_map(|max| Op::Drain { max }),
        1 => Just(Op::Suspend),
        2 => Just(Op::Reconnect),
        2 => any::<bool>().prop_map(|stale| Op::FetchingCompleted { stale }),
    ]
}

proptest! {
    /// Whatever the op sequence, delivery never repeats an index, stale
    /// recovery pushes never land, and the term never decreases.
    #[test]
    fn queue_never_delivers_twice_and_terms_are_monotone(ops in prop::collection::vec(op_strategy(), 1..120)) {
        let mut q = TargetQueue::new(Mutation::None);
        let mut next_index = 1u64;
        let mut drained: Vec<u64> = Vec::new();
        let mut last_term = q.current_term();

        for op in ops {
            match op {
                Op::PushNormal => {
                    let outcome = q.push(Message::new(next_index, Arc::from(&[][..])), true, 0);
                    if outcome.queued() {
                        next_index += 1;
                    }
                    prop_assert_ne!(outcome, PushOutcome::DroppedStaleTerm);
                }
                Op::PushRecovery { stale } => {
                    // a live recovery stream only pushes while its queue is
                    // recovery-fetching; a stale stream can fire at any time
                    if !stale && q.state() != QueueState::RecoveryFetching {
                        continue;
                    }
                    let term = if stale { q.current_term().saturating_sub(1) } else { q.current_term() };
                    let outcome = q.push(Message::new(next_index, Arc::from(&[][..])), false, term);
                    match outcome {
                        PushOutcome::QueuedCatchup => {
                            prop_assert!(!stale, "stale recovery push landed");
                            next_index += 1;
                        }
                        PushOutcome::QueuedNormal => prop_assert!(false, "recovery push landed in normal lane"),
                        PushOutcome::DroppedStaleTerm => prop_assert!(stale),
                        PushOutcome::DroppedSuspended => prop_assert_eq!(q.state(), QueueState::Suspended),
                    }
                }
                Op::Drain { max } => {
                    let batch = q.drain_batch(max);
                    prop_assert!(batch.len() <= max, "batch exceeded its bound");
                    for m in &batch.messages {
                        drained.push(m.index);
                    }
                }
                Op::Suspend => {
                    q.suspend();
                    prop_assert!(q.is_empty());
                }
                Op::Reconnect => {
                    if q.state() == QueueState::Suspended {
                        q.reconnect();
                    }
                }
                Op::FetchingCompleted { stale } => {
                    let term = if stale { q.current_term().saturating_sub(1) } else { q.current_term() };
                    q.fetching_completed(term);
                }
            }
            prop_assert!(q.current_term() >= last_term, "term regressed");
            last_term = q.current_term();
            // catchup entries only exist while a recovery is in progress
            if q.catchup_len() > 0 {
                prop_assert!(matches!(
                    q.state(),
                    QueueState::RecoveryFetching | QueueState::FetchingCompleted
                ));
            }
        }

        let mut unique = drained.clone();
        unique.sort_unstable();
        unique.dedup();
        prop_assert_eq!(unique.len(), drained.len(), "an index was delivered twice: {:?}", drained);
    }

    /// Batches drain lanes in FIFO order: the indexes inside one batch are
    /// strictly ascending whenever pushes were made in ascending order.
    #[test]
    fn batches_preserve_push_order(normals in 0usize..12, catchups in 0usize..12, max in 1usize..8) {
        let mut q = TargetQueue::new(Mutation::None);
        q.suspend();
        let term = q.reconnect();
        let mut idx = 1u64;
        for _ in 0..catchups {
            q.push(Message::new(idx, Arc::from(&[][..])), false, term);
            idx += 1;
        }
        for _ in 0..normals {
            q.push(Message::new(idx, Arc::from(&[][..])), true, term);
            idx += 1;
        }
        q.fetching_completed(term);
        let mut all: Vec<u64> = Vec::new();
        loop {
            let batch = q.drain_batch(max);
            if batch.is_empty() {
                break;
            }
            let ids: Vec<u64> = batch.messages.iter().map(|m| m.index).collect();
            prop_assert!(ids.windows(2).all(|w| w[0] < w[1]), "batch not ascending: {:?}", ids);
            all.extend(ids);
        }
        // catchup first, then normal, nothing lost
        let expected: Vec<u64> = (1..idx).collect();
        prop_assert_eq!(all, expected);
    }

    /// Tag packing is lossless over the whole field space.
    #[test]
    fn tag_packing_is_lossless(target in 0u16..20, write in any::<bool>(), epoch in 1u32..100_000, ok in any::<bool>()) {
        let tag = CompletionTag::new(
            target,
            if write { TagKind::Write } else { TagKind::Read },
            epoch,
            ok,
        );
        prop_assert_eq!(CompletionTag::unpack(tag.pack()), tag);
    }
}

/// Scenario text round-trips for generator-produced scenarios.
#[test]
fn scenario_text_round_trips_for_generated_scenarios() {
    let config = walrelay_core::fuzz::FuzzConfig::default();
    for lane in 0..300u64 {
        let seed = walrelay_core::sim::derive_seed(0x51, lane);
        let scenario = walrelay_core::fuzz::generate_scenario(&config, seed);
        let reparsed = Scenario::parse(&scenario.to_text())
            .unwrap_or_else(|e| panic!("seed {seed}: {e}\n{}", scenario.to_text()));
        assert_eq!(reparsed, scenario, "seed {seed}");
    }
}
