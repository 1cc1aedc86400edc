//! Small-step semantics of the whole delivery engine.
//!
//! The entire system — fetchers, dispatcher, per-target queues, streams,
//! completion queue, and the simulated targets — is one explicit state
//! ([`SystemState`]) advanced by atomic steps ([`Step`]). Each step
//! corresponds to one mutual-exclusion region of the live engine: a dispatch
//! of one entry, one completion-queue consumption, one message applied by a
//! target, one health-checker action, and so on. Everything that happens
//! inside a step happens under the corresponding lock in the threaded engine,
//! so interleavings of steps are exactly the interleavings the locks permit.
//!
//! Two drivers share these semantics: the deterministic simulator picks one
//! enabled step at a time with a seeded RNG, and the explorer branches over
//! *every* enabled step to enumerate the full interleaving space. Both get
//! the same safety checks for free: every message a target consumes is
//! validated against the next index it must receive, recomputed from the log
//! alone.

use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use crate::log::LogService;
use crate::queue::{
    Batch, FetchingCompletedOutcome, Message, Mutation, PoppedBatches, PushOutcome, QueueState,
    SuspendStats, TargetId, TargetQueue,
};
use crate::recovery::{needs_dummy, recovery_range, restart_start_index, RecoveryConfig};
use crate::transport::{
    Ack, CompletionTag, ContractViolation, CqFailureMode, SimTarget, StreamState, TagKind,
    WriteOutcome,
};

/// Static configuration of a system instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SystemConfig {
    pub targets: u16,
    /// Batch bound and dummy interval.
    pub recovery: RecoveryConfig,
    /// Targets acknowledge every k-th message of a batch (and always the
    /// last one).
    pub ack_batching: u32,
    pub cq_mode: CqFailureMode,
    pub mutation: Mutation,
}

impl Default for SystemConfig {
    fn default() -> SystemConfig {
        SystemConfig {
            targets: 1,
            recovery: RecoveryConfig {
                dummy_interval: None,
                max_batch_size: 2,
            },
            ack_batching: 1,
            cq_mode: CqFailureMode::Flush,
            mutation: Mutation::None,
        }
    }
}

/// Read access to the log, abstracted so the explorer can use a synthetic
/// fixed-size log while the simulator uses a live [`LogService`].
pub trait EntrySource {
    /// Highest appended index.
    fn available(&self) -> u64;
    /// Membership bitmask of `index` (0 if unavailable).
    fn targets_mask(&self, index: u64) -> u32;
    /// Target `t`'s payload slice of entry `index`.
    fn payload_for(&self, index: u64, t: TargetId) -> Arc<[u8]>;
    /// Smallest index `> after` addressed at `t` — the delivery oracle.
    fn next_index_for(&self, t: TargetId, after: u64) -> Option<u64>;
}

impl EntrySource for LogService {
    fn available(&self) -> u64 {
        self.len()
    }

    fn targets_mask(&self, index: u64) -> u32 {
        LogService::targets_mask(self, index)
    }

    fn payload_for(&self, index: u64, t: TargetId) -> Arc<[u8]> {
        self.read(index)
            .map(|e| e.payload_for(t))
            .unwrap_or_else(|| Arc::from(&[][..]))
    }

    fn next_index_for(&self, t: TargetId, after: u64) -> Option<u64> {
        LogService::next_index_for(self, t, after)
    }
}

/// Fixed log of `nmessages` entries, each addressed at every target. This is
/// the workload shape the explorer checks.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticLog {
    pub nmessages: u64,
    pub targets: u16,
}

impl EntrySource for SyntheticLog {
    fn available(&self) -> u64 {
        self.nmessages
    }

    fn targets_mask(&self, index: u64) -> u32 {
        if index >= 1 && index <= self.nmessages {
            (1u32 << self.targets) - 1
        } else {
            0
        }
    }

    fn payload_for(&self, _index: u64, _t: TargetId) -> Arc<[u8]> {
        Arc::from(&[][..])
    }

    fn next_index_for(&self, _t: TargetId, after: u64) -> Option<u64> {
        if after < self.nmessages {
            Some(after + 1)
        } else {
            None
        }
    }
}

/// A live recovery-stream activation. Stale activations keep stepping after
/// a newer one starts; the term guard in the queue is what defuses them.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RecoveryFetcher {
    pub target: TargetId,
    pub next: u64,
    pub end: u64,
    pub term: u32,
}

/// One atomic step of the system. See the module docs for the granularity
/// contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Step {
    /// Main fetcher dispatches its next entry to all targets.
    MainDispatch,
    /// Recovery fetcher in slot `i` dispatches its next entry, or signals
    /// completion once its range is exhausted.
    RecoveryStep(usize),
    /// Completion-queue consumer processes one tag.
    CqConsume,
    /// Target applies one message from its in-flight stream.
    TargetConsume(TargetId),
    /// An armed read completes with the next in-flight acknowledgment.
    AckComplete(TargetId),
    /// Fault: the target process dies and its stream tears down.
    Crash(TargetId),
    /// Health checker observes the crash and suspends the queue.
    HealthDown(TargetId),
    /// Fault recovery: the target process comes back (durable state intact).
    Restart(TargetId),
    /// Health checker observes the restart and runs the reconnect handler.
    HealthUp(TargetId),
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Step::MainDispatch => write!(f, "main-dispatch"),
            Step::RecoveryStep(i) => write!(f, "recovery-step {i}"),
            Step::CqConsume => write!(f, "cq-consume"),
            Step::TargetConsume(t) => write!(f, "consume {t}"),
            Step::AckComplete(t) => write!(f, "ack-complete {t}"),
            Step::Crash(t) => write!(f, "crash {t}"),
            Step::HealthDown(t) => write!(f, "health-down {t}"),
            Step::Restart(t) => write!(f, "restart {t}"),
            Step::HealthUp(t) => write!(f, "health-up {t}"),
        }
    }
}

impl Step {
    /// Stable textual form, parseable by [`Step::parse`].
    pub fn parse(s: &str) -> Option<Step> {
        let mut parts = s.split_whitespace();
        let head = parts.next()?;
        let arg = parts.next();
        let num = |a: Option<&str>| a.and_then(|v| v.parse::<u64>().ok());
        match head {
            "main-dispatch" => Some(Step::MainDispatch),
            "recovery-step" => num(arg).map(|n| Step::RecoveryStep(n as usize)),
            "cq-consume" => Some(Step::CqConsume),
            "consume" => num(arg).map(|n| Step::TargetConsume(n as TargetId)),
            "ack-complete" => num(arg).map(|n| Step::AckComplete(n as TargetId)),
            "crash" => num(arg).map(|n| Step::Crash(n as TargetId)),
            "health-down" => num(arg).map(|n| Step::HealthDown(n as TargetId)),
            "restart" => num(arg).map(|n| Step::Restart(n as TargetId)),
            "health-up" => num(arg).map(|n| Step::HealthUp(n as TargetId)),
            _ => None,
        }
    }
}

/// Safety failures detected while applying a step. Any of these ends the run
/// with a counterexample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// A target saw a duplicate, out-of-order, or skipped index.
    DeliveryOrder {
        target: TargetId,
        index: u64,
        is_dummy: bool,
        persisted: u64,
        expected: Option<u64>,
    },
    /// The replayer recorded a non-increasing acknowledgment.
    AckRegression {
        target: TargetId,
        ack: u64,
        last_ack: u64,
    },
    /// A queue moved between states outside the allowed closure.
    IllegalTransition {
        target: TargetId,
        from: QueueState,
        to: QueueState,
    },
    /// The engine broke the transport's one-outstanding-op discipline.
    Contract(ContractViolation),
    /// Terminal state reached without full delivery.
    Stuck { missing: Vec<(TargetId, u64)> },
    /// Terminal state with acknowledgments that never propagated back.
    AcksStranded {
        target: TargetId,
        persisted: u64,
        last_ack: u64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DeliveryOrder {
                target,
                index,
                is_dummy,
                persisted,
                expected,
            } => write!(
                f,
                "delivery-order: target {target} received index {index}{} with persisted={persisted}, expected {}",
                if *is_dummy { " (dummy)" } else { "" },
                match expected {
                    Some(e) => e.to_string(),
                    None => "nothing".to_string(),
                }
            ),
            Violation::AckRegression { target, ack, last_ack } => write!(
                f,
                "ack-regression: target {target} acked {ack} after {last_ack}"
            ),
            Violation::IllegalTransition { target, from, to } => write!(
                f,
                "illegal-transition: target {target} queue moved {} -> {}",
                from.tag(),
                to.tag()
            ),
            Violation::Contract(c) => write!(f, "contract: {c}"),
            Violation::Stuck { missing } => {
                write!(f, "stuck: undelivered")?;
                for (t, i) in missing.iter().take(8) {
                    write!(f, " t{t}:{i}")?;
                }
                Ok(())
            }
            Violation::AcksStranded {
                target,
                persisted,
                last_ack,
            } => write!(
                f,
                "acks-stranded: target {target} persisted {persisted} but engine recorded {last_ack}"
            ),
        }
    }
}

impl From<ContractViolation> for Violation {
    fn from(c: ContractViolation) -> Violation {
        Violation::Contract(c)
    }
}

/// Hooks for harnesses that want to trace, time, or count what a step did.
/// Every method defaults to a no-op.
#[allow(unused_variables)]
pub trait StepObserver {
    fn dispatched(&mut self, index: u64, is_normal: bool, current_index: u64) {}
    fn pushed(&mut self, t: TargetId, msg: &Message, is_normal: bool, term: u32, outcome: PushOutcome) {}
    fn wrote(&mut self, t: TargetId, epoch: u32, batch: &Batch, sent: bool) {}
    fn tag_surfaced(&mut self, tag: CompletionTag) {}
    fn tag_consumed(&mut self, tag: CompletionTag, stale: bool) {}
    fn consumed(&mut self, t: TargetId, index: u64, is_dummy: bool) {}
    fn ack_emitted(&mut self, t: TargetId, epoch: u32, index: u64) {}
    fn ack_completed(&mut self, t: TargetId, epoch: u32, index: u64) {}
    fn ack_recorded(&mut self, t: TargetId, index: u64) {}
    fn crashed(&mut self, t: TargetId) {}
    fn suspended(&mut self, t: TargetId, stats: SuspendStats, popped_cleared: usize) {}
    fn restarted(&mut self, t: TargetId, persisted: u64) {}
    fn reconnected(&mut self, t: TargetId, epoch: u32, term: u32, last_ack: u64, current_index: u64) {}
    fn recovery_spawned(&mut self, t: TargetId, start: u64, end: u64, term: u32) {}
    fn fetching_completed(&mut self, t: TargetId, term: u32, outcome: FetchingCompletedOutcome) {}
    fn dummy_emitted(&mut self, t: TargetId, index: u64) {}
    fn dummy_check(&mut self, current_index: u64, last_acks: &[u64]) {}
    fn replayer_restarted(&mut self, start_index: u64, last_acks: &[u64]) {}
}

/// Observer that ignores everything (the explorer's default).
pub struct NullObserver;

impl StepObserver for NullObserver {}

/// The complete in-memory state of the engine plus the simulated transport
/// and targets. Hashable so the explorer can deduplicate visited states.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SystemState {
    pub queues: Vec<TargetQueue>,
    pub popped: Vec<PoppedBatches>,
    pub streams: Vec<StreamState>,
    pub targets: Vec<SimTarget>,
    pub cq: VecDeque<CompletionTag>,
    pub last_acks: Vec<u64>,
    /// Highest main-stream index dispatched so far.
    pub current_index: u64,
    /// Next index the main fetcher will dispatch.
    pub main_next: u64,
    pub recoveries: Vec<RecoveryFetcher>,
    /// Main-stream dispatch counter driving the dummy interval.
    pub normal_dispatches: u64,
    /// Last dummy index emitted per target, to suppress repeats.
    pub last_dummy: Vec<u64>,
    /// Crash steps taken (the explorer's fault budget accounting).
    pub crashes: u32,
    /// Crash observed by the transport but not yet by the health checker.
    pub down_pending: Vec<bool>,
}

impl SystemState {
    /// Fresh engine against targets that already consumed through
    /// `initial_acks[t]`. The main stream starts at `min(initial_acks) + 1`.
    pub fn new(cfg: &SystemConfig, initial_acks: &[u64]) -> SystemState {
        assert_eq!(initial_acks.len(), cfg.targets as usize);
        let n = cfg.targets as usize;
        let mut streams: Vec<StreamState> = (0..cfg.targets).map(StreamState::new).collect();
        for s in &mut streams {
            // a freshly connected stream has no outstanding read; arm one
            s.arm_read().expect("fresh stream");
            s.read_ready = false;
        }
        let start = restart_start_index(initial_acks);
        SystemState {
            queues: (0..n).map(|_| TargetQueue::new(cfg.mutation)).collect(),
            popped: (0..n).map(|_| PoppedBatches::new()).collect(),
            streams,
            targets: (0..cfg.targets)
                .map(|t| SimTarget::with_progress(t, initial_acks[t as usize]))
                .collect(),
            cq: VecDeque::new(),
            last_acks: initial_acks.to_vec(),
            current_index: start - 1,
            main_next: start,
            recoveries: Vec::new(),
            normal_dispatches: 0,
            last_dummy: vec![0; n],
            crashes: 0,
            down_pending: vec![false; n],
        }
    }

    // ---- step enumeration ----------------------------------------------

    /// Protocol steps currently enabled (fetchers, consumer, transport,
    /// targets), in canonical order.
    pub fn protocol_steps<L: EntrySource>(&self, log: &L, out: &mut Vec<Step>) {
        if self.main_next <= log.available() {
            out.push(Step::MainDispatch);
        }
        for i in 0..self.recoveries.len() {
            out.push(Step::RecoveryStep(i));
        }
        if !self.cq.is_empty() {
            out.push(Step::CqConsume);
        }
        for t in 0..self.streams.len() {
            if self.streams[t].read_completable() {
                out.push(Step::AckComplete(t as TargetId));
            }
        }
        for t in 0..self.streams.len() {
            if self.targets[t].alive && !self.streams[t].inflight.is_empty() {
                out.push(Step::TargetConsume(t as TargetId));
            }
        }
    }

    /// Health-checker steps pending delivery.
    pub fn health_steps(&self, out: &mut Vec<Step>) {
        for t in 0..self.queues.len() {
            if self.down_pending[t] {
                out.push(Step::HealthDown(t as TargetId));
            }
        }
        for t in 0..self.queues.len() {
            if self.targets[t].alive
                && !self.down_pending[t]
                && self.queues[t].state() == QueueState::Suspended
            {
                out.push(Step::HealthUp(t as TargetId));
            }
        }
    }

    /// Fault-process steps: crashes while budget remains, restarts always
    /// (every crash gets its recovery).
    pub fn fault_steps(&self, budget: u32, out: &mut Vec<Step>) {
        for t in 0..self.queues.len() {
            if self.crashes < budget && self.crash_allowed(t as TargetId) {
                out.push(Step::Crash(t as TargetId));
            }
        }
        for t in 0..self.queues.len() {
            if !self.targets[t].alive && !self.down_pending[t] {
                out.push(Step::Restart(t as TargetId));
            }
        }
    }

    /// A crash is injectable while the target is up and integrated; a target
    /// already suspended contributes nothing new by dying again before the
    /// health checker reconnects it.
    pub fn crash_allowed(&self, t: TargetId) -> bool {
        self.targets[t as usize].alive
            && !self.down_pending[t as usize]
            && self.queues[t as usize].state() != QueueState::Suspended
    }

    // ---- step application -----------------------------------------------

    pub fn apply<L: EntrySource, O: StepObserver>(
        &mut self,
        cfg: &SystemConfig,
        log: &L,
        step: Step,
        obs: &mut O,
    ) -> Result<(), Violation> {
        match step {
            Step::MainDispatch => self.main_dispatch(cfg, log, obs),
            Step::RecoveryStep(i) => self.recovery_step(cfg, log, i, obs),
            Step::CqConsume => self.cq_consume(cfg, obs),
            Step::TargetConsume(t) => self.target_consume(cfg, log, t, obs),
            Step::AckComplete(t) => {
                self.ack_complete(t, obs);
                Ok(())
            }
            Step::Crash(t) => {
                self.crash(cfg, t, obs);
                Ok(())
            }
            Step::HealthDown(t) => {
                self.health_down(t, obs);
                Ok(())
            }
            Step::Restart(t) => {
                self.restart_target(t, obs);
                Ok(())
            }
            Step::HealthUp(t) => self.health_up(cfg, t, obs),
        }
    }

    fn main_dispatch<L: EntrySource, O: StepObserver>(
        &mut self,
        cfg: &SystemConfig,
        log: &L,
        obs: &mut O,
    ) -> Result<(), Violation> {
        let index = self.main_next;
        debug_assert!(index <= log.available());
        self.main_next += 1;
        self.dispatch(cfg, log, index, true, 0, None, obs)
    }

    fn recovery_step<L: EntrySource, O: StepObserver>(
        &mut self,
        cfg: &SystemConfig,
        log: &L,
        slot: usize,
        obs: &mut O,
    ) -> Result<(), Violation> {
        let f = self.recoveries[slot].clone();
        if f.next <= f.end {
            self.recoveries[slot].next += 1;
            self.dispatch(cfg, log, f.next, false, f.term, Some(f.target), obs)
        } else {
            let outcome = self.queues[f.target as usize].fetching_completed(f.term);
            obs.fetching_completed(f.target, f.term, outcome);
            self.recoveries.remove(slot);
            if outcome.wants_send() {
                self.send_next(cfg, f.target, obs)?;
            }
            Ok(())
        }
    }

    /// One entry routed to its target queues. Runs under the dispatch lock
    /// in the live engine, so the whole body is one atomic step here.
    #[allow(clippy::too_many_arguments)]
    fn dispatch<L: EntrySource, O: StepObserver>(
        &mut self,
        cfg: &SystemConfig,
        log: &L,
        index: u64,
        is_normal: bool,
        term: u32,
        only_target: Option<TargetId>,
        obs: &mut O,
    ) -> Result<(), Violation> {
        let mask = log.targets_mask(index);
        for t in 0..cfg.targets {
            if mask & (1u32 << t) == 0 {
                continue;
            }
            if let Some(only) = only_target {
                if t != only {
                    continue;
                }
            }
            if self.last_acks[t as usize] >= index {
                continue; // already acknowledged; never re-push
            }
            let msg = Message::new(index, log.payload_for(index, t));
            let outcome = self.queues[t as usize].push(msg.clone(), is_normal, term);
            obs.pushed(t, &msg, is_normal, term, outcome);
            self.send_next(cfg, t, obs)?;
            self.read_next(cfg, t, obs)?;
        }
        if is_normal {
            self.current_index = index;
            obs.dispatched(index, true, self.current_index);
            self.normal_dispatches += 1;
            if let Some(interval) = cfg.recovery.dummy_interval {
                if interval > 0 && self.normal_dispatches.is_multiple_of(u64::from(interval)) {
                    self.emit_dummies(cfg, log, interval, obs)?;
                }
            }
        } else {
            obs.dispatched(index, false, self.current_index);
        }
        Ok(())
    }

    /// Push payload-free index advancements to targets that have fallen more
    /// than `interval` entries behind.
    ///
    /// Only targets in the normal state get one: recovering queues drain the
    /// catchup lane first and get their index advanced by the recovery stream
    /// itself. A target addressed by the current entry is skipped too — its
    /// acknowledgment will reach `current_index` through the real entry, and
    /// a dummy with an equal index would break strict ack monotonicity.
    fn emit_dummies<L: EntrySource, O: StepObserver>(
        &mut self,
        cfg: &SystemConfig,
        log: &L,
        interval: u32,
        obs: &mut O,
    ) -> Result<(), Violation> {
        obs.dummy_check(self.current_index, &self.last_acks);
        let ci = self.current_index;
        let ci_mask = log.targets_mask(ci);
        for t in 0..cfg.targets {
            let ti = t as usize;
            if self.queues[ti].state() != QueueState::Normal
                || !self.targets[ti].alive
                || !needs_dummy(self.last_acks[ti], ci, interval)
                || self.last_dummy[ti] == ci
                || ci_mask & (1u32 << t) != 0
            {
                continue;
            }
            let term = self.queues[ti].current_term();
            let msg = Message::dummy(ci);
            let outcome = self.queues[ti].push(msg.clone(), true, term);
            obs.pushed(t, &msg, true, term, outcome);
            self.last_dummy[ti] = ci;
            obs.dummy_emitted(t, ci);
            self.send_next(cfg, t, obs)?;
            self.read_next(cfg, t, obs)?;
        }
        Ok(())
    }

    /// Write the next batch if the stream is idle and the queue can provide
    /// one. The formed batch becomes the in-flight current batch.
    fn send_next<O: StepObserver>(
        &mut self,
        cfg: &SystemConfig,
        t: TargetId,
        obs: &mut O,
    ) -> Result<(), Violation> {
        let ti = t as usize;
        if !self.streams[ti].write_ready {
            return Ok(());
        }
        let batch = self.queues[ti].drain_batch(cfg.recovery.max_batch_size as usize);
        if batch.is_empty() || self.queues[ti].state() == QueueState::Suspended {
            return Ok(());
        }
        self.popped[ti].set_current(batch.clone());
        let stream = &mut self.streams[ti];
        let epoch = stream.epoch;
        let outcome = stream.write(batch.clone())?;
        stream.write_ready = false;
        obs.wrote(t, epoch, &batch, outcome == WriteOutcome::Sent);
        match outcome {
            WriteOutcome::Sent => {
                let tag = CompletionTag::new(t, TagKind::Write, epoch, true);
                self.cq.push_back(tag);
                obs.tag_surfaced(tag);
            }
            WriteOutcome::Failed => {
                if cfg.cq_mode == CqFailureMode::FailTags {
                    let tag = CompletionTag::new(t, TagKind::Write, epoch, false);
                    self.cq.push_back(tag);
                    obs.tag_surfaced(tag);
                }
                // flush mode: the failure never surfaces; the reconnect
                // handler resets the stream
            }
        }
        Ok(())
    }

    /// Arm a read for the next acknowledgment if none is outstanding.
    fn read_next<O: StepObserver>(
        &mut self,
        cfg: &SystemConfig,
        t: TargetId,
        obs: &mut O,
    ) -> Result<(), Violation> {
        let stream = &mut self.streams[t as usize];
        if !stream.read_ready {
            return Ok(());
        }
        stream.read_ready = false;
        if stream.connected {
            stream.arm_read()?;
        } else if cfg.cq_mode == CqFailureMode::FailTags {
            let tag = CompletionTag::new(t, TagKind::Read, stream.epoch, false);
            self.cq.push_back(tag);
            obs.tag_surfaced(tag);
        }
        Ok(())
    }

    fn cq_consume<O: StepObserver>(
        &mut self,
        cfg: &SystemConfig,
        obs: &mut O,
    ) -> Result<(), Violation> {
        let tag = self.cq.pop_front().expect("cq_consume requires a tag");
        let ti = tag.target as usize;
        if tag.epoch != self.streams[ti].epoch {
            // completion of an operation from a dead connection; acting on it
            // would double-arm the fresh stream
            obs.tag_consumed(tag, true);
            return Ok(());
        }
        obs.tag_consumed(tag, false);
        match tag.kind {
            TagKind::Write => {
                self.streams[ti].write_completed();
                if tag.ok {
                    self.popped[ti].pop_batch();
                    self.streams[ti].write_ready = true;
                    self.send_next(cfg, tag.target, obs)?;
                } else {
                    // the batch was never delivered; recovery will replay it
                    self.streams[ti].write_ready = true;
                }
            }
            TagKind::Read => {
                if tag.ok {
                    let ack = self.streams[ti]
                        .pending_response
                        .take()
                        .expect("read completion without response");
                    if ack.index <= self.last_acks[ti] {
                        return Err(Violation::AckRegression {
                            target: tag.target,
                            ack: ack.index,
                            last_ack: self.last_acks[ti],
                        });
                    }
                    self.last_acks[ti] = ack.index;
                    self.popped[ti].erase(ack.index);
                    self.streams[ti].read_ready = true;
                    obs.ack_recorded(tag.target, ack.index);
                    self.read_next(cfg, tag.target, obs)?;
                } else {
                    self.streams[ti].pending_response = None;
                    self.streams[ti].read_ready = true;
                    // no re-arm: the reconnect handler arms the fresh read
                }
            }
        }
        Ok(())
    }

    /// Target applies the next in-flight message: validate it against the
    /// delivery oracle, persist atomically, maybe acknowledge.
    fn target_consume<L: EntrySource, O: StepObserver>(
        &mut self,
        cfg: &SystemConfig,
        log: &L,
        t: TargetId,
        obs: &mut O,
    ) -> Result<(), Violation> {
        let ti = t as usize;
        let stream = &mut self.streams[ti];
        let batch = stream.inflight.front_mut().expect("consume requires traffic");
        let msg = batch.messages.remove(0);
        let batch_done = batch.messages.is_empty();
        if batch_done {
            stream.inflight.pop_front();
        }

        let target = &mut self.targets[ti];
        let expected = log.next_index_for(t, target.persisted_index);
        let ok = if msg.index <= target.persisted_index {
            false // duplicate or regression
        } else if msg.is_dummy {
            // a dummy may only advance past indexes this target was never
            // sent; skipping a pending real entry is a loss
            expected.is_none_or(|e| e > msg.index)
        } else {
            expected == Some(msg.index)
        };
        if !ok {
            return Err(Violation::DeliveryOrder {
                target: t,
                index: msg.index,
                is_dummy: msg.is_dummy,
                persisted: target.persisted_index,
                expected,
            });
        }

        if !msg.is_dummy {
            target.applied.push(msg.index);
        }
        target.persisted_index = msg.index;
        target.since_ack += 1;
        obs.consumed(t, msg.index, msg.is_dummy);

        if batch_done || target.since_ack >= cfg.ack_batching {
            target.since_ack = 0;
            let ack = Ack {
                index: target.persisted_index,
            };
            stream.acks.push_back(ack);
            obs.ack_emitted(t, stream.epoch, ack.index);
        }
        Ok(())
    }

    fn ack_complete<O: StepObserver>(&mut self, t: TargetId, obs: &mut O) {
        let stream = &mut self.streams[t as usize];
        let ack = stream.complete_read();
        let tag = CompletionTag::new(t, TagKind::Read, stream.epoch, true);
        self.cq.push_back(tag);
        obs.ack_completed(t, stream.epoch, ack.index);
        obs.tag_surfaced(tag);
    }

    /// Target process dies: durable state survives, connection tears down,
    /// pending completions flush or fail per the configured mode.
    pub fn crash<O: StepObserver>(&mut self, cfg: &SystemConfig, t: TargetId, obs: &mut O) {
        let ti = t as usize;
        debug_assert!(self.crash_allowed(t));
        self.crashes += 1;
        self.targets[ti].crash();
        let epoch = self.streams[ti].epoch;
        let pending = self.streams[ti].teardown();
        obs.crashed(t);
        match cfg.cq_mode {
            CqFailureMode::Flush => {
                self.cq.retain(|tag| tag.target != t);
            }
            CqFailureMode::FailTags => {
                for kind in pending {
                    let tag = CompletionTag::new(t, kind, epoch, false);
                    self.cq.push_back(tag);
                    obs.tag_surfaced(tag);
                }
            }
        }
        self.down_pending[ti] = true;
    }

    fn health_down<O: StepObserver>(&mut self, t: TargetId, obs: &mut O) {
        let ti = t as usize;
        debug_assert!(self.down_pending[ti]);
        let stats = self.queues[ti].suspend();
        let cleared = self.popped[ti].len() + usize::from(self.popped[ti].current().is_some());
        self.popped[ti].clear();
        self.down_pending[ti] = false;
        obs.suspended(t, stats, cleared);
    }

    /// Target process restarts with its durable state. The connection is not
    /// back until the health checker reconnects it.
    pub fn restart_target<O: StepObserver>(&mut self, t: TargetId, obs: &mut O) {
        let ti = t as usize;
        debug_assert!(!self.targets[ti].alive);
        self.targets[ti].restart();
        obs.restarted(t, self.targets[ti].persisted_index);
    }

    /// Reconnect handler: bump the term, learn the target's durable index,
    /// and replay exactly what it missed. Atomic with dispatch, so
    /// `current_index` bounds the range precisely.
    fn health_up<O: StepObserver>(
        &mut self,
        cfg: &SystemConfig,
        t: TargetId,
        obs: &mut O,
    ) -> Result<(), Violation> {
        let ti = t as usize;
        let epoch = self.streams[ti].reconnect();
        let term = self.queues[ti].reconnect();
        let last = self.targets[ti].last_ack();
        self.targets[ti].since_ack = 0;
        self.last_acks[ti] = last;
        self.read_next(cfg, t, obs)?;
        obs.reconnected(t, epoch, term, last, self.current_index);
        match recovery_range(last, self.current_index) {
            Some((start, end)) => {
                self.recoveries.push(RecoveryFetcher {
                    target: t,
                    next: start,
                    end,
                    term,
                });
                obs.recovery_spawned(t, start, end, term);
            }
            None => self.queues[ti].skip_recovery(),
        }
        Ok(())
    }

    /// Engine restart: every in-memory structure is rebuilt from scratch and
    /// the main stream resumes at `min(last_acks) + 1`, re-learned from the
    /// targets' durable indexes. Requires all targets reachable.
    pub fn replayer_restart<O: StepObserver>(&mut self, cfg: &SystemConfig, obs: &mut O) {
        debug_assert!(self.targets.iter().all(|t| t.alive));
        let n = cfg.targets as usize;
        self.cq.clear();
        self.recoveries.clear();
        self.normal_dispatches = 0;
        self.last_dummy = vec![0; n];
        self.down_pending = vec![false; n];
        for ti in 0..n {
            self.streams[ti].teardown();
            self.streams[ti].reconnect();
            self.streams[ti]
                .arm_read()
                .expect("fresh stream after restart");
            self.streams[ti].read_ready = false;
            self.queues[ti] = TargetQueue::new(cfg.mutation);
            self.popped[ti].clear();
            self.targets[ti].since_ack = 0;
            self.last_acks[ti] = self.targets[ti].last_ack();
        }
        let start = restart_start_index(&self.last_acks);
        self.current_index = start - 1;
        self.main_next = start;
        obs.replayer_restarted(start, &self.last_acks);
    }

    // ---- end-state checks -------------------------------------------------

    /// Entries owed but not applied, per target: the liveness ledger.
    pub fn missing_deliveries<L: EntrySource>(&self, log: &L) -> Vec<(TargetId, u64)> {
        let mut missing = Vec::new();
        for t in 0..self.targets.len() as u16 {
            let mut cursor = self.targets[t as usize].initial_persisted;
            let applied = &self.targets[t as usize].applied;
            let mut ai = 0usize;
            while let Some(next) = log.next_index_for(t, cursor) {
                if ai < applied.len() && applied[ai] == next {
                    ai += 1;
                } else {
                    missing.push((t, next));
                }
                cursor = next;
            }
        }
        missing
    }

    /// Post-drain structural invariants: queues empty and normal, nothing
    /// retained, acknowledgments caught up to everything dispatched.
    pub fn quiescent_invariants(&self) -> Result<(), String> {
        for (ti, q) in self.queues.iter().enumerate() {
            if !q.is_empty() {
                return Err(format!("target {ti}: queue not drained"));
            }
            if q.state() != QueueState::Normal {
                return Err(format!("target {ti}: state {} at quiescence", q.state().tag()));
            }
            if !self.popped[ti].is_empty() {
                return Err(format!("target {ti}: popped batches not erased"));
            }
            if self.last_acks[ti] > self.current_index {
                return Err(format!(
                    "target {ti}: last_ack {} beyond current_index {}",
                    self.last_acks[ti], self.current_index
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(targets: u16) -> SystemConfig {
        SystemConfig {
            targets,
            ..SystemConfig::default()
        }
    }

    /// Drive every enabled protocol/health step in fixed order until nothing
    /// is enabled. Fine for fault-free checks.
    fn drain<L: EntrySource>(state: &mut SystemState, config: &SystemConfig, log: &L) {
        let mut steps = Vec::new();
        for _ in 0..100_000 {
            steps.clear();
            state.protocol_steps(log, &mut steps);
            state.health_steps(&mut steps);
            let Some(&step) = steps.first() else { return };
            state
                .apply(config, log, step, &mut NullObserver)
                .expect("fault-free drain must stay safe");
        }
        panic!("drain did not quiesce");
    }

    #[test]
    fn fault_free_delivery_completes() {
        let config = cfg(2);
        let log = SyntheticLog {
            nmessages: 5,
            targets: 2,
        };
        let mut state = SystemState::new(&config, &[0, 0]);
        drain(&mut state, &config, &log);
        assert!(state.missing_deliveries(&log).is_empty());
        state.quiescent_invariants().unwrap();
        assert_eq!(state.last_acks, vec![5, 5]);
        assert_eq!(state.targets[0].applied, vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn dispatch_skips_already_acked_targets() {
        let config = cfg(2);
        let log = SyntheticLog {
            nmessages: 5,
            targets: 2,
        };
        // target 0 already consumed everything; target 1 starts at 3
        let mut state = SystemState::new(&config, &[5, 3]);
        assert_eq!(state.main_next, 4);
        state
            .apply(&config, &log, Step::MainDispatch, &mut NullObserver)
            .unwrap();
        assert_eq!(state.queues[0].normal_len(), 0);
        assert!(state.streams[0].inflight.is_empty());
        let routed = state.queues[1].normal_len()
            + state.streams[1].inflight.iter().map(|b| b.len()).sum::<usize>();
        assert_eq!(routed, 1);
        assert_eq!(state.current_index, 4);
        drain(&mut state, &config, &log);
        assert!(state.missing_deliveries(&log).is_empty());
    }

    #[test]
    fn crash_cycle_recovers_missed_range() {
        let config = cfg(1);
        let log = SyntheticLog {
            nmessages: 4,
            targets: 1,
        };
        let mut state = SystemState::new(&config, &[0]);
        let mut obs = NullObserver;
        // dispatch 1..2, deliver nothing yet
        state.apply(&config, &log, Step::MainDispatch, &mut obs).unwrap();
        state.apply(&config, &log, Step::MainDispatch, &mut obs).unwrap();
        state.crash(&config, 0, &mut obs);
        state.apply(&config, &log, Step::HealthDown(0), &mut obs).unwrap();
        state.apply(&config, &log, Step::Restart(0), &mut obs).unwrap();
        state.apply(&config, &log, Step::HealthUp(0), &mut obs).unwrap();
        assert_eq!(state.recoveries.len(), 1);
        assert_eq!(state.recoveries[0].next, 1);
        assert_eq!(state.recoveries[0].end, 2);
        assert_eq!(state.recoveries[0].term, 2);
        drain(&mut state, &config, &log);
        assert!(state.missing_deliveries(&log).is_empty());
        assert_eq!(state.targets[0].applied, vec![1, 2, 3, 4]);
    }

    #[test]
    fn reconnect_with_nothing_missed_goes_straight_to_normal() {
        let config = cfg(1);
        let log = SyntheticLog {
            nmessages: 2,
            targets: 1,
        };
        let mut state = SystemState::new(&config, &[0]);
        let mut obs = NullObserver;
        state.apply(&config, &log, Step::MainDispatch, &mut obs).unwrap();
        // deliver and ack index 1 fully
        drain(&mut state, &config, &log);
        state.crash(&config, 0, &mut obs);
        state.apply(&config, &log, Step::HealthDown(0), &mut obs).unwrap();
        state.apply(&config, &log, Step::Restart(0), &mut obs).unwrap();
        state.apply(&config, &log, Step::HealthUp(0), &mut obs).unwrap();
        assert!(state.recoveries.is_empty());
        assert_eq!(state.queues[0].state(), QueueState::Normal);
        assert_eq!(state.queues[0].current_term(), 2);
    }

    #[test]
    fn stale_recovery_push_is_dropped_by_term() {
        let config = cfg(1);
        let log = SyntheticLog {
            nmessages: 3,
            targets: 1,
        };
        let mut state = SystemState::new(&config, &[0]);
        let mut obs = NullObserver;
        for _ in 0..3 {
            state.apply(&config, &log, Step::MainDispatch, &mut obs).unwrap();
        }
        // two full crash cycles before the first recovery fetcher moves
        for _ in 0..2 {
            state.crash(&config, 0, &mut obs);
            state.apply(&config, &log, Step::HealthDown(0), &mut obs).unwrap();
            state.apply(&config, &log, Step::Restart(0), &mut obs).unwrap();
            state.apply(&config, &log, Step::HealthUp(0), &mut obs).unwrap();
        }
        assert_eq!(state.recoveries.len(), 2);
        assert_eq!(state.recoveries[0].term, 2);
        assert_eq!(state.recoveries[1].term, 3);
        // stale fetcher pushes first: dropped
        state.apply(&config, &log, Step::RecoveryStep(0), &mut obs).unwrap();
        assert_eq!(state.queues[0].catchup_len(), 0);
        // current fetcher pushes: queued (it may have been sent immediately
        // into the in-flight batch, so count queue + wire)
        state.apply(&config, &log, Step::RecoveryStep(1), &mut obs).unwrap();
        let landed = state.queues[0].catchup_len()
            + state.streams[0].inflight.iter().map(|b| b.len()).sum::<usize>();
        assert_eq!(landed, 1);
        drain(&mut state, &config, &log);
        assert!(state.missing_deliveries(&log).is_empty());
        assert_eq!(state.targets[0].applied, vec![1, 2, 3]);
    }

    #[test]
    fn replayer_restart_resumes_from_min_ack() {
        let config = cfg(2);
        let log4 = SyntheticLog {
            nmessages: 4,
            targets: 2,
        };
        let mut state = SystemState::new(&config, &[0, 0]);
        let mut obs = NullObserver;
        drain(&mut state, &config, &log4); // both targets reach 4
        state.replayer_restart(&config, &mut obs);
        assert_eq!(state.main_next, 5);
        assert_eq!(state.current_index, 4);
        assert_eq!(state.last_acks, vec![4, 4]);
        assert_eq!(state.queues[0].current_term(), 1);
        // two more entries appended after the restart
        let log6 = SyntheticLog {
            nmessages: 6,
            targets: 2,
        };
        drain(&mut state, &config, &log6);
        assert!(state.missing_deliveries(&log6).is_empty());
        // applied exactly once despite the restart
        assert_eq!(state.targets[0].applied, vec![1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn dummies_advance_idle_target() {
        // target 1 is a member of nothing; dummies must drag its ack forward
        #[derive(Clone, Copy)]
        struct IdleSecond {
            n: u64,
        }
        impl EntrySource for IdleSecond {
            fn available(&self) -> u64 {
                self.n
            }
            fn targets_mask(&self, index: u64) -> u32 {
                if index >= 1 && index <= self.n {
                    0b01
                } else {
                    0
                }
            }
            fn payload_for(&self, _i: u64, _t: TargetId) -> Arc<[u8]> {
                Arc::from(&[][..])
            }
            fn next_index_for(&self, t: TargetId, after: u64) -> Option<u64> {
                if t == 0 && after < self.n {
                    Some(after + 1)
                } else {
                    None
                }
            }
        }
        let config = SystemConfig {
            targets: 2,
            recovery: RecoveryConfig {
                dummy_interval: Some(3),
                max_batch_size: 2,
            },
            ..SystemConfig::default()
        };
        let log = IdleSecond { n: 12 };
        let mut state = SystemState::new(&config, &[0, 0]);
        drain(&mut state, &config, &log);
        assert!(state.missing_deliveries(&log).is_empty());
        assert!(
            state.last_acks[1] >= 12 - 2 * 3,
            "idle target ack {} too far behind",
            state.last_acks[1]
        );
        assert!(state.targets[1].applied.is_empty());
        // restart now starts near the head instead of index 1
        assert!(restart_start_index(&state.last_acks) >= 12 - 2 * 3);
    }

    #[test]
    fn recovery_fetcher_dispatches_range_in_order_then_completes_once() {
        #[derive(Default)]
        struct Recorder {
            recovery_dispatches: Vec<u64>,
            completions: u32,
        }
        impl StepObserver for Recorder {
            fn dispatched(&mut self, index: u64, is_normal: bool, _ci: u64) {
                if !is_normal {
                    self.recovery_dispatches.push(index);
                }
            }
            fn fetching_completed(
                &mut self,
                _t: TargetId,
                _term: u32,
                _outcome: FetchingCompletedOutcome,
            ) {
                self.completions += 1;
            }
        }
        let config = cfg(1);
        let log = SyntheticLog {
            nmessages: 5,
            targets: 1,
        };
        let mut state = SystemState::new(&config, &[0]);
        let mut rec = Recorder::default();
        for _ in 0..5 {
            state.apply(&config, &log, Step::MainDispatch, &mut rec).unwrap();
        }
        state.crash(&config, 0, &mut rec);
        state.apply(&config, &log, Step::HealthDown(0), &mut rec).unwrap();
        state.apply(&config, &log, Step::Restart(0), &mut rec).unwrap();
        state.apply(&config, &log, Step::HealthUp(0), &mut rec).unwrap();
        let (start, end) = (state.recoveries[0].next, state.recoveries[0].end);
        while !state.recoveries.is_empty() {
            state.apply(&config, &log, Step::RecoveryStep(0), &mut rec).unwrap();
        }
        let expected: Vec<u64> = (start..=end).collect();
        assert_eq!(rec.recovery_dispatches, expected);
        assert_eq!(rec.completions, 1);
    }

    #[test]
    fn consume_oracle_accepts_progress_and_rejects_duplicates_and_gaps() {
        let config = cfg(1);
        let log = SyntheticLog {
            nmessages: 6,
            targets: 1,
        };
        let batch = |ids: &[u64]| Batch {
            messages: ids
                .iter()
                .map(|&i| Message::new(i, Arc::from(&[][..])))
                .collect(),
        };

        // persisted 4, batch [5,6], acks batched: applies both, one ack for
        // the last index of the sequence
        let batched = SystemConfig {
            ack_batching: 8,
            ..config
        };
        let mut state = SystemState::new(&batched, &[4]);
        state.streams[0].inflight.push_back(batch(&[5, 6]));
        state.apply(&batched, &log, Step::TargetConsume(0), &mut NullObserver).unwrap();
        state.apply(&batched, &log, Step::TargetConsume(0), &mut NullObserver).unwrap();
        assert_eq!(state.targets[0].persisted_index, 6);
        assert_eq!(state.streams[0].acks.len(), 1);
        assert_eq!(state.streams[0].acks[0].index, 6);

        // duplicate: persisted 4, batch [4]
        let mut state = SystemState::new(&config, &[4]);
        state.streams[0].inflight.push_back(batch(&[4]));
        let err = state
            .apply(&config, &log, Step::TargetConsume(0), &mut NullObserver)
            .unwrap_err();
        assert!(matches!(err, Violation::DeliveryOrder { index: 4, .. }));

        // gap: persisted 4, batch [6] while 5 is owed
        let mut state = SystemState::new(&config, &[4]);
        state.streams[0].inflight.push_back(batch(&[6]));
        let err = state
            .apply(&config, &log, Step::TargetConsume(0), &mut NullObserver)
            .unwrap_err();
        assert!(matches!(
            err,
            Violation::DeliveryOrder {
                index: 6,
                expected: Some(5),
                ..
            }
        ));

        // a dummy may advance past indexes the target is not owed, but may
        // not skip a pending real entry
        let mut state = SystemState::new(&config, &[4]);
        state.streams[0].inflight.push_back(Batch {
            messages: vec![Message::dummy(5)],
        });
        let err = state
            .apply(&config, &log, Step::TargetConsume(0), &mut NullObserver)
            .unwrap_err();
        assert!(matches!(err, Violation::DeliveryOrder { is_dummy: true, .. }));
    }

    #[test]
    fn tag_conservation_when_fault_free() {
        struct Counter {
            surfaced: u64,
            consumed: u64,
        }
        impl StepObserver for Counter {
            fn tag_surfaced(&mut self, _tag: CompletionTag) {
                self.surfaced += 1;
            }
            fn tag_consumed(&mut self, _tag: CompletionTag, stale: bool) {
                assert!(!stale, "no stale tags in a fault-free run");
                self.consumed += 1;
            }
        }
        let config = cfg(2);
        let log = SyntheticLog {
            nmessages: 4,
            targets: 2,
        };
        let mut state = SystemState::new(&config, &[0, 0]);
        let mut counter = Counter {
            surfaced: 0,
            consumed: 0,
        };
        let mut steps = Vec::new();
        loop {
            steps.clear();
            state.protocol_steps(&log, &mut steps);
            let Some(&step) = steps.first() else { break };
            state.apply(&config, &log, step, &mut counter).unwrap();
        }
        assert_eq!(counter.surfaced, counter.consumed);
        assert!(state.cq.is_empty());
    }
}
