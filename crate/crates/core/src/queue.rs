//! Per-target dual queue: the state machine that decides which message a
//! target receives next.
//!
//! Each target owns one [`TargetQueue`] holding two FIFO lanes. The *normal*
//! lane carries entries pushed by the main stream; the *catchup* lane carries
//! entries replayed by a recovery stream after the target was down. Four
//! states control which lane drains first and whether pushes are accepted at
//! all. Recovery pushes are guarded by a per-target *term* that increments on
//! every reconnect, so a recovery stream that outlived its target silently
//! loses its pushes instead of duplicating entries.
//!
//! Concurrency contract (enforced by callers, not by this module): `push`,
//! `suspend`, and `drain_batch` serialize on one region per queue; the
//! popped-batch bookkeeping in [`PoppedBatches`] serializes on a second
//! region. `front`/`pop` are only called from inside `drain_batch`.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::sync::Arc;

/// Target identifier. Dense small integers; engines allocate them from 0.
pub type TargetId = u16;

/// Deliberate protocol defects used as regression oracles for the checker
/// and the fuzzer. `None` is the shipping protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Mutation {
    #[default]
    None,
    /// Recovery pushes and completion signals ignore the term guard, so a
    /// stale recovery stream can land entries after a newer one started.
    NoTerm,
    /// The queue never leaves `FetchingCompleted` when the catchup lane
    /// drains, wedging the normal lane forever.
    NoFcTransition,
}

impl Mutation {
    pub fn parse(name: &str) -> Option<Mutation> {
        match name {
            "none" => Some(Mutation::None),
            "no-term" => Some(Mutation::NoTerm),
            "no-fc-transition" => Some(Mutation::NoFcTransition),
            _ => None,
        }
    }
}

impl fmt::Display for Mutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Mutation::None => "none",
            Mutation::NoTerm => "no-term",
            Mutation::NoFcTransition => "no-fc-transition",
        };
        f.write_str(name)
    }
}

/// Queue state.
///
/// * `Normal` — target up, no recovery in progress.
/// * `RecoveryFetching` — target up, a recovery stream is still reading
///   missed entries from the log.
/// * `FetchingCompleted` — the recovery stream has pushed everything it will
///   push, but the catchup lane has not fully drained to the target yet.
/// * `Suspended` — target down/disconnected; pushes are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QueueState {
    Normal,
    RecoveryFetching,
    FetchingCompleted,
    Suspended,
}

impl QueueState {
    /// Short form used in traces and state dumps.
    pub fn tag(self) -> &'static str {
        match self {
            QueueState::Normal => "N",
            QueueState::RecoveryFetching => "RF",
            QueueState::FetchingCompleted => "FC",
            QueueState::Suspended => "S",
        }
    }

    /// The reachable transitions. Self-transitions are not listed; everything
    /// else is a bug, and the explorer checks this closure on every step.
    pub fn transition_allowed(from: QueueState, to: QueueState) -> bool {
        use QueueState::*;
        matches!(
            (from, to),
            (Normal, Suspended)
                | (RecoveryFetching, Suspended)
                | (FetchingCompleted, Suspended)
                | (Suspended, RecoveryFetching)
                | (Suspended, Normal)
                | (RecoveryFetching, FetchingCompleted)
                | (RecoveryFetching, Normal)
                | (FetchingCompleted, Normal)
        )
    }
}

/// One per-target message: the entry index, that target's slice of the
/// payload, and whether this is a payload-free index advancement.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Message {
    pub index: u64,
    pub is_dummy: bool,
    pub payload: Arc<[u8]>,
}

impl Message {
    pub fn new(index: u64, payload: Arc<[u8]>) -> Message {
        Message {
            index,
            is_dummy: false,
            payload,
        }
    }

    /// Payload-free message carrying only an index for the target to persist.
    pub fn dummy(index: u64) -> Message {
        Message {
            index,
            is_dummy: true,
            payload: Arc::from(&[][..]),
        }
    }
}

/// An ordered slice of messages written to a stream in one operation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Batch {
    pub messages: Vec<Message>,
}

impl Batch {
    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    /// Index of the final message; `None` for an empty batch.
    pub fn last_index(&self) -> Option<u64> {
        self.messages.last().map(|m| m.index)
    }

    pub fn first_index(&self) -> Option<u64> {
        self.messages.first().map(|m| m.index)
    }
}

/// Where a push ended up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PushOutcome {
    QueuedNormal,
    QueuedCatchup,
    /// Dropped because the queue is suspended.
    DroppedSuspended,
    /// Dropped because the push carried an expired recovery term.
    DroppedStaleTerm,
}

impl PushOutcome {
    pub fn queued(self) -> bool {
        matches!(self, PushOutcome::QueuedNormal | PushOutcome::QueuedCatchup)
    }
}

/// Result of a completion signal from a recovery stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FetchingCompletedOutcome {
    /// Guard failed: not recovering, or the signal carried a stale term.
    Ignored,
    /// Catchup lane was already empty; queue went straight to `Normal`.
    ToNormal,
    /// Catchup entries remain; queue moved to `FetchingCompleted`.
    CatchupPending,
}

impl FetchingCompletedOutcome {
    /// Both live transitions want a send kicked so queued entries start
    /// flowing again.
    pub fn wants_send(self) -> bool {
        !matches!(self, FetchingCompletedOutcome::Ignored)
    }
}

/// Counts reported by `suspend` so harnesses can observe what was thrown away.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SuspendStats {
    pub dropped_normal: usize,
    pub dropped_catchup: usize,
}

/// Read-only view used by harness assertions and traces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueueSnapshot {
    pub state: QueueState,
    pub normal_len: usize,
    pub catchup_len: usize,
    pub current_term: u32,
}

/// The dual-lane queue itself. See the module docs for the state semantics.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TargetQueue {
    state: QueueState,
    normal: VecDeque<Message>,
    catchup: VecDeque<Message>,
    current_term: u32,
    mutation: Mutation,
}

impl TargetQueue {
    pub fn new(mutation: Mutation) -> TargetQueue {
        TargetQueue {
            state: QueueState::Normal,
            normal: VecDeque::new(),
            catchup: VecDeque::new(),
            current_term: 1,
            mutation,
        }
    }

    pub fn state(&self) -> QueueState {
        self.state
    }

    pub fn current_term(&self) -> u32 {
        self.current_term
    }

    pub fn normal_len(&self) -> usize {
        self.normal.len()
    }

    pub fn catchup_len(&self) -> usize {
        self.catchup.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normal.is_empty() && self.catchup.is_empty()
    }

    pub fn snapshot(&self) -> QueueSnapshot {
        QueueSnapshot {
            state: self.state,
            normal_len: self.normal.len(),
            catchup_len: self.catchup.len(),
            current_term: self.current_term,
        }
    }

    fn term_matches(&self, term: u32) -> bool {
        self.mutation == Mutation::NoTerm || term == self.current_term
    }

    /// Append a message. Normal pushes ignore the term; recovery pushes land
    /// in the catchup lane only while their term is current. Suspended queues
    /// drop everything.
    pub fn push(&mut self, msg: Message, is_normal: bool, term: u32) -> PushOutcome {
        if self.state == QueueState::Suspended {
            return PushOutcome::DroppedSuspended;
        }
        if is_normal {
            self.normal.push_back(msg);
            PushOutcome::QueuedNormal
        } else if self.term_matches(term) {
            self.catchup.push_back(msg);
            PushOutcome::QueuedCatchup
        } else {
            PushOutcome::DroppedStaleTerm
        }
    }

    /// Peek the next deliverable message, or `None` when the queue can not
    /// provide one in its current state.
    ///
    /// While recovering, only the catchup lane is visible. When fetching has
    /// completed and the catchup lane is empty, the queue flips to `Normal`
    /// here before exposing the normal lane. Only called from `drain_batch`.
    fn front(&mut self) -> Option<&Message> {
        match self.state {
            QueueState::RecoveryFetching | QueueState::FetchingCompleted
                if !self.catchup.is_empty() =>
            {
                self.catchup.front()
            }
            QueueState::FetchingCompleted if self.mutation != Mutation::NoFcTransition => {
                // catchup is empty: all missed entries are out, rejoin the
                // main stream.
                self.state = QueueState::Normal;
                self.normal.front()
            }
            QueueState::Normal if !self.normal.is_empty() => self.normal.front(),
            _ => None,
        }
    }

    /// Remove the message `front` exposed. Draining the last catchup message
    /// in `FetchingCompleted` rejoins the main stream.
    fn pop(&mut self) {
        match self.state {
            QueueState::RecoveryFetching | QueueState::FetchingCompleted
                if !self.catchup.is_empty() =>
            {
                self.catchup.pop_front();
                if self.state == QueueState::FetchingCompleted
                    && self.catchup.is_empty()
                    && self.mutation != Mutation::NoFcTransition
                {
                    self.state = QueueState::Normal;
                }
            }
            QueueState::Normal if !self.normal.is_empty() => {
                self.normal.pop_front();
            }
            _ => {}
        }
    }

    /// Form the next batch: repeatedly take the front until the queue has
    /// nothing deliverable or the batch holds exactly `max_size` messages.
    /// Returns the batch, possibly empty. The caller is responsible for
    /// recording it as the in-flight batch (see [`PoppedBatches`]).
    pub fn drain_batch(&mut self, max_size: usize) -> Batch {
        let mut batch = Batch::default();
        while batch.len() < max_size {
            match self.front() {
                Some(msg) => batch.messages.push(msg.clone()),
                None => break,
            }
            self.pop();
        }
        batch
    }

    /// Target went down: drop both lanes and stop accepting pushes.
    /// Idempotent. The caller must also clear its [`PoppedBatches`].
    pub fn suspend(&mut self) -> SuspendStats {
        let stats = SuspendStats {
            dropped_normal: self.normal.len(),
            dropped_catchup: self.catchup.len(),
        };
        self.state = QueueState::Suspended;
        self.normal.clear();
        self.catchup.clear();
        stats
    }

    /// Recovery stream finished pushing. Moves `RecoveryFetching` to
    /// `Normal` (catchup already drained) or `FetchingCompleted` (catchup
    /// still has entries); stale terms and every other state are ignored.
    pub fn fetching_completed(&mut self, term: u32) -> FetchingCompletedOutcome {
        if self.state != QueueState::RecoveryFetching || !self.term_matches(term) {
            return FetchingCompletedOutcome::Ignored;
        }
        if self.catchup.is_empty() {
            self.state = QueueState::Normal;
            FetchingCompletedOutcome::ToNormal
        } else {
            self.state = QueueState::FetchingCompleted;
            FetchingCompletedOutcome::CatchupPending
        }
    }

    /// Target reconnected: bump the term and start accepting recovery pushes.
    /// Returns the new term.
    pub fn reconnect(&mut self) -> u32 {
        debug_assert_eq!(self.state, QueueState::Suspended);
        self.current_term += 1;
        self.state = QueueState::RecoveryFetching;
        self.current_term
    }

    /// The reconnect decision found nothing missed; skip recovery entirely.
    pub fn skip_recovery(&mut self) {
        debug_assert_eq!(self.state, QueueState::RecoveryFetching);
        self.state = QueueState::Normal;
    }
}

/// Sent-but-unacknowledged batches, keyed by their last entry index.
///
/// A batch moves here when its write completes, and is erased when the
/// acknowledgment for its last index arrives. Until then the transport may
/// still reference its memory. This is the second mutual-exclusion region of
/// a target queue.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct PoppedBatches {
    current: Option<Batch>,
    popped: BTreeMap<u64, Batch>,
}

impl PoppedBatches {
    pub fn new() -> PoppedBatches {
        PoppedBatches::default()
    }

    /// Record the batch most recently formed by `drain_batch`.
    pub fn set_current(&mut self, batch: Batch) {
        self.current = Some(batch);
    }

    pub fn current(&self) -> Option<&Batch> {
        self.current.as_ref()
    }

    /// Move the current batch into the retained map. No-op when there is no
    /// current batch or it is empty (a stale completion after a suspend).
    pub fn pop_batch(&mut self) -> Option<u64> {
        let batch = self.current.take()?;
        let last = batch.last_index()?;
        debug_assert!(
            self.popped.last_key_value().is_none_or(|(k, _)| *k < last),
            "popped batches must be recorded in ascending index order"
        );
        self.popped.insert(last, batch);
        Some(last)
    }

    /// Drop the retained batch acknowledged through `index`. Absent keys are
    /// a no-op: the ack may predate a restart that already cleared the map.
    pub fn erase(&mut self, index: u64) -> bool {
        self.popped.remove(&index).is_some()
    }

    /// Drop everything, in-flight batch included. Called on suspend.
    pub fn clear(&mut self) {
        self.current = None;
        self.popped.clear();
    }

    pub fn len(&self) -> usize {
        self.popped.len()
    }

    pub fn is_empty(&self) -> bool {
        self.popped.is_empty() && self.current.is_none()
    }

    pub fn keys(&self) -> impl Iterator<Item = u64> + '_ {
        self.popped.keys().copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msg(index: u64) -> Message {
        Message::new(index, Arc::from(&[][..]))
    }

    fn queue_with(state: QueueState, normal: &[u64], catchup: &[u64]) -> TargetQueue {
        let mut q = TargetQueue::new(Mutation::None);
        for &i in normal {
            q.push(msg(i), true, 1);
        }
        for &i in catchup {
            q.push(msg(i), false, 1);
        }
        q.state = state;
        q
    }

    #[test]
    fn push_normal_in_normal_state() {
        let mut q = TargetQueue::new(Mutation::None);
        assert_eq!(q.push(msg(1), true, 1), PushOutcome::QueuedNormal);
        assert_eq!(q.normal_len(), 1);
        assert_eq!(q.catchup_len(), 0);
    }

    #[test]
    fn push_dropped_while_suspended() {
        let mut q = TargetQueue::new(Mutation::None);
        q.suspend();
        assert_eq!(q.push(msg(1), true, 1), PushOutcome::DroppedSuspended);
        assert_eq!(q.push(msg(1), false, 1), PushOutcome::DroppedSuspended);
        assert!(q.is_empty());
    }

    #[test]
    fn stale_recovery_push_dropped() {
        let mut q = TargetQueue::new(Mutation::None);
        q.suspend();
        q.reconnect(); // term 2
        assert_eq!(q.state(), QueueState::RecoveryFetching);
        assert_eq!(q.push(msg(1), false, 1), PushOutcome::DroppedStaleTerm);
        assert_eq!(q.catchup_len(), 0);
        // current-term push lands
        assert_eq!(q.push(msg(1), false, 2), PushOutcome::QueuedCatchup);
    }

    #[test]
    fn front_prefers_catchup_while_recovering() {
        let mut q = queue_with(QueueState::RecoveryFetching, &[2], &[1]);
        assert_eq!(q.front().unwrap().index, 1);
        assert_eq!(q.state(), QueueState::RecoveryFetching);
    }

    #[test]
    fn front_flips_fc_to_normal_when_catchup_empty() {
        let mut q = queue_with(QueueState::FetchingCompleted, &[2], &[]);
        assert_eq!(q.front().unwrap().index, 2);
        assert_eq!(q.state(), QueueState::Normal);
    }

    #[test]
    fn front_empty_normal_is_none() {
        let mut q = TargetQueue::new(Mutation::None);
        assert!(q.front().is_none());
    }

    #[test]
    fn front_fc_with_both_lanes_empty_is_none_after_flip() {
        let mut q = queue_with(QueueState::FetchingCompleted, &[], &[]);
        assert!(q.front().is_none());
        assert_eq!(q.state(), QueueState::Normal);
    }

    #[test]
    fn pop_fc_last_catchup_rejoins_normal() {
        let mut q = queue_with(QueueState::FetchingCompleted, &[], &[1]);
        q.pop();
        assert_eq!(q.catchup_len(), 0);
        assert_eq!(q.state(), QueueState::Normal);
    }

    #[test]
    fn pop_rf_keeps_state() {
        let mut q = queue_with(QueueState::RecoveryFetching, &[], &[1, 2]);
        q.pop();
        assert_eq!(q.catchup_len(), 1);
        assert_eq!(q.state(), QueueState::RecoveryFetching);
    }

    #[test]
    fn pop_empty_normal_is_noop() {
        let mut q = TargetQueue::new(Mutation::None);
        q.pop();
        assert_eq!(q.state(), QueueState::Normal);
        assert!(q.is_empty());
    }

    #[test]
    fn suspend_clears_everything_and_is_idempotent() {
        let mut q = queue_with(QueueState::Normal, &[1, 2, 3], &[]);
        let mut popped = PoppedBatches::new();
        popped.set_current(Batch {
            messages: vec![msg(1)],
        });
        popped.pop_batch();
        popped.set_current(Batch {
            messages: vec![msg(2)],
        });
        popped.pop_batch();
        assert_eq!(popped.len(), 2);

        let stats = q.suspend();
        popped.clear();
        assert_eq!(stats.dropped_normal, 3);
        assert_eq!(q.state(), QueueState::Suspended);
        assert!(q.is_empty());
        assert!(popped.is_empty());

        let stats2 = q.suspend();
        assert_eq!(stats2, SuspendStats::default());
        assert_eq!(q.state(), QueueState::Suspended);
    }

    #[test]
    fn suspend_mid_recovery_makes_completion_a_noop() {
        let mut q = TargetQueue::new(Mutation::None);
        q.suspend();
        let term = q.reconnect();
        q.push(msg(1), false, term);
        q.suspend();
        assert_eq!(q.fetching_completed(term), FetchingCompletedOutcome::Ignored);
        assert_eq!(q.state(), QueueState::Suspended);
    }

    #[test]
    fn fetching_completed_empty_catchup_goes_normal() {
        let mut q = TargetQueue::new(Mutation::None);
        q.suspend();
        let term = q.reconnect();
        assert_eq!(q.fetching_completed(term), FetchingCompletedOutcome::ToNormal);
        assert_eq!(q.state(), QueueState::Normal);
    }

    #[test]
    fn fetching_completed_with_catchup_pending() {
        let mut q = TargetQueue::new(Mutation::None);
        q.suspend();
        let term = q.reconnect();
        q.push(msg(1), false, term);
        assert_eq!(
            q.fetching_completed(term),
            FetchingCompletedOutcome::CatchupPending
        );
        assert_eq!(q.state(), QueueState::FetchingCompleted);
    }

    #[test]
    fn fetching_completed_stale_term_ignored() {
        let mut q = TargetQueue::new(Mutation::None);
        q.suspend();
        let old = q.reconnect();
        q.suspend();
        let _new = q.reconnect();
        assert_eq!(q.fetching_completed(old), FetchingCompletedOutcome::Ignored);
        assert_eq!(q.state(), QueueState::RecoveryFetching);
    }

    /// Reference formation: the front/pop loop written out naively, used as
    /// an oracle for `drain_batch`'s bound convention (at most `max` entries).
    fn reference_drain(q: &mut TargetQueue, max: usize) -> Vec<u64> {
        let mut out = Vec::new();
        loop {
            if out.len() >= max {
                break;
            }
            let Some(m) = q.front() else { break };
            out.push(m.index);
            q.pop();
        }
        out
    }

    #[test]
    fn drain_batch_bound_is_exact() {
        let mut q = queue_with(QueueState::Normal, &[1, 2, 3], &[]);
        let mut oracle_q = q.clone();
        let expected = reference_drain(&mut oracle_q, 2);
        assert_eq!(expected, vec![1, 2]);

        let batch = q.drain_batch(2);
        let got: Vec<u64> = batch.messages.iter().map(|m| m.index).collect();
        assert_eq!(got, expected);
        assert_eq!(q.normal_len(), 1);
    }

    #[test]
    fn drain_batch_stops_at_catchup_boundary_in_rf() {
        // While still fetching, the normal lane is invisible even if catchup
        // runs dry mid-batch.
        let mut q = queue_with(QueueState::RecoveryFetching, &[2], &[1]);
        let batch = q.drain_batch(10);
        let got: Vec<u64> = batch.messages.iter().map(|m| m.index).collect();
        assert_eq!(got, vec![1]);
        assert_eq!(q.state(), QueueState::RecoveryFetching);
        assert_eq!(q.normal_len(), 1);
    }

    #[test]
    fn drain_batch_empty_queue_yields_empty_batch() {
        let mut q = TargetQueue::new(Mutation::None);
        assert!(q.drain_batch(4).is_empty());
    }

    #[test]
    fn drain_batch_crosses_fc_into_normal() {
        let mut q = queue_with(QueueState::FetchingCompleted, &[3, 4], &[2]);
        let batch = q.drain_batch(10);
        let got: Vec<u64> = batch.messages.iter().map(|m| m.index).collect();
        assert_eq!(got, vec![2, 3, 4]);
        assert_eq!(q.state(), QueueState::Normal);
    }

    #[test]
    fn pop_batch_records_by_last_index() {
        let mut popped = PoppedBatches::new();
        popped.set_current(Batch {
            messages: vec![msg(5), msg(6), msg(7)],
        });
        assert_eq!(popped.pop_batch(), Some(7));
        assert_eq!(popped.keys().collect::<Vec<_>>(), vec![7]);
    }

    #[test]
    fn two_send_cycles_retain_both_batches() {
        let mut popped = PoppedBatches::new();
        popped.set_current(Batch {
            messages: vec![msg(3)],
        });
        popped.pop_batch();
        popped.set_current(Batch {
            messages: vec![msg(7)],
        });
        popped.pop_batch();
        assert_eq!(popped.keys().collect::<Vec<_>>(), vec![3, 7]);
    }

    #[test]
    fn pop_batch_without_current_is_noop() {
        let mut popped = PoppedBatches::new();
        assert_eq!(popped.pop_batch(), None);
        popped.set_current(Batch::default());
        assert_eq!(popped.pop_batch(), None);
    }

    #[test]
    fn erase_removes_and_tolerates_absent_keys() {
        let mut popped = PoppedBatches::new();
        popped.set_current(Batch {
            messages: vec![msg(3)],
        });
        popped.pop_batch();
        popped.set_current(Batch {
            messages: vec![msg(7)],
        });
        popped.pop_batch();

        assert!(popped.erase(3));
        assert_eq!(popped.keys().collect::<Vec<_>>(), vec![7]);
        assert!(!popped.erase(99));
        assert!(popped.erase(7));
        assert!(popped.is_empty());
    }

    #[test]
    fn term_monotone_across_reconnects() {
        let mut q = TargetQueue::new(Mutation::None);
        let mut last = q.current_term();
        for _ in 0..5 {
            q.suspend();
            let t = q.reconnect();
            assert!(t > last);
            last = t;
            q.fetching_completed(t);
        }
    }

    #[test]
    fn mutation_no_term_accepts_stale_pushes() {
        let mut q = TargetQueue::new(Mutation::NoTerm);
        q.suspend();
        q.reconnect(); // term 2
        assert_eq!(q.push(msg(1), false, 1), PushOutcome::QueuedCatchup);
    }

    #[test]
    fn mutation_no_fc_transition_wedges_queue() {
        let mut q = TargetQueue::new(Mutation::NoFcTransition);
        q.suspend();
        let term = q.reconnect();
        q.push(msg(1), false, term);
        q.fetching_completed(term);
        assert_eq!(q.state(), QueueState::FetchingCompleted);
        let batch = q.drain_batch(10);
        assert_eq!(batch.len(), 1);
        // still FC, and the normal lane is unreachable
        assert_eq!(q.state(), QueueState::FetchingCompleted);
        q.push(msg(2), true, term);
        assert!(q.drain_batch(10).is_empty());
    }

    #[test]
    fn transition_closure_table() {
        use QueueState::*;
        let legal = [
            (Normal, Suspended),
            (RecoveryFetching, Suspended),
            (FetchingCompleted, Suspended),
            (Suspended, RecoveryFetching),
            (Suspended, Normal),
            (RecoveryFetching, FetchingCompleted),
            (RecoveryFetching, Normal),
            (FetchingCompleted, Normal),
        ];
        for &(a, b) in &legal {
            assert!(QueueState::transition_allowed(a, b));
        }
        assert!(!QueueState::transition_allowed(Normal, RecoveryFetching));
        assert!(!QueueState::transition_allowed(Normal, FetchingCompleted));
        assert!(!QueueState::transition_allowed(Suspended, FetchingCompleted));
        assert!(!QueueState::transition_allowed(FetchingCompleted, RecoveryFetching));
    }
}
