//! The asynchronous bidirectional FIFO streaming abstraction and its
//! simulated pieces.
//!
//! Every read/write armed on a stream carries a [`CompletionTag`]; the
//! transport reports finished operations by surfacing the tag on a single
//! completion queue consumed by one thread. A stream lives inside a
//! connection *epoch*: when the target crashes or reconnects the epoch ends,
//! and nothing — neither messages, acknowledgments, nor completion tags —
//! crosses an epoch boundary. Stale-epoch completions are discarded by the
//! consumer, which is what keeps the one-outstanding-operation discipline
//! intact across reconnects.

use std::collections::VecDeque;

use crate::queue::{Batch, TargetId};

/// Which direction an asynchronous operation ran in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TagKind {
    Write,
    Read,
}

/// Completion token: target, direction, connection epoch, and whether the
/// operation succeeded. Packs losslessly into a single integer, which is how
/// a real completion queue would carry it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CompletionTag {
    pub target: TargetId,
    pub kind: TagKind,
    pub epoch: u32,
    pub ok: bool,
}

impl CompletionTag {
    pub fn new(target: TargetId, kind: TagKind, epoch: u32, ok: bool) -> CompletionTag {
        CompletionTag {
            target,
            kind,
            epoch,
            ok,
        }
    }

    /// Layout: bit 0 = kind, bit 1 = ok, bits 2..18 = target, bits 18..50 = epoch.
    pub fn pack(self) -> u64 {
        let kind = match self.kind {
            TagKind::Write => 0u64,
            TagKind::Read => 1u64,
        };
        kind | ((self.ok as u64) << 1) | ((self.target as u64) << 2) | ((self.epoch as u64) << 18)
    }

    pub fn unpack(raw: u64) -> CompletionTag {
        CompletionTag {
            kind: if raw & 1 == 0 { TagKind::Write } else { TagKind::Read },
            ok: raw & 2 != 0,
            target: ((raw >> 2) & 0xffff) as TargetId,
            epoch: ((raw >> 18) & 0xffff_ffff) as u32,
        }
    }
}

/// What happens to completion tags still pending when a target's stream is
/// torn down. Real stacks surface them as failed operations; a coarser model
/// simply forgets them. Both must be safe, so the harness exercises both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CqFailureMode {
    /// Pending tags vanish with the epoch.
    Flush,
    /// Pending tags surface with `ok = false`.
    FailTags,
}

impl CqFailureMode {
    pub fn parse(name: &str) -> Option<CqFailureMode> {
        match name {
            "flush" => Some(CqFailureMode::Flush),
            "fail" | "fail-tags" => Some(CqFailureMode::FailTags),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CqFailureMode::Flush => "flush",
            CqFailureMode::FailTags => "fail",
        }
    }
}

/// An acknowledgment: the last entry index the target durably consumed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Ack {
    pub index: u64,
}

/// Contract breaches the transport refuses to absorb. Any of these aborts a
/// harness run with a diagnostic — they are engine bugs, not protocol faults.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ContractViolation {
    #[error("target {target}: second write armed before the first completed")]
    DoubleWrite { target: TargetId },
    #[error("target {target}: second read armed before the first completed")]
    DoubleRead { target: TargetId },
}

/// Simulated per-target bidirectional stream plus the readiness flags the
/// dispatcher keeps for it.
///
/// `write_ready`/`read_ready` are the dispatcher's own gate: not-ready means
/// exactly one operation of that direction is outstanding. The transport
/// additionally tracks outstanding operations itself so a gate bug surfaces
/// as a [`ContractViolation`] instead of silent reordering.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StreamState {
    pub target: TargetId,
    pub epoch: u32,
    pub connected: bool,
    pub write_ready: bool,
    pub read_ready: bool,
    /// Completed-but-unconsumed acknowledgment (the response slot).
    pub pending_response: Option<Ack>,
    /// A read is armed and waiting for the next acknowledgment.
    pub read_armed: bool,
    write_outstanding: bool,
    /// Replayer -> target: batches in flight, FIFO within the epoch.
    pub inflight: VecDeque<Batch>,
    /// Target -> replayer: acknowledgments in flight, FIFO within the epoch.
    pub acks: VecDeque<Ack>,
}

/// What a write attempt did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WriteOutcome {
    /// Batch is on the wire; a success tag will surface.
    Sent,
    /// Stream is down; the batch is lost and a failure tag surfaces (the
    /// flush mode suppresses even that).
    Failed,
}

impl StreamState {
    pub fn new(target: TargetId) -> StreamState {
        StreamState {
            target,
            epoch: 1,
            connected: true,
            write_ready: true,
            read_ready: true,
            pending_response: None,
            read_armed: false,
            write_outstanding: false,
            inflight: VecDeque::new(),
            acks: VecDeque::new(),
        }
    }

    /// Write a batch toward the target. The completion tag is produced by the
    /// caller placing it on the completion queue; this only moves bytes and
    /// enforces the single-outstanding-write contract.
    pub fn write(&mut self, batch: Batch) -> Result<WriteOutcome, ContractViolation> {
        if self.write_outstanding {
            return Err(ContractViolation::DoubleWrite { target: self.target });
        }
        self.write_outstanding = true;
        if self.connected {
            self.inflight.push_back(batch);
            Ok(WriteOutcome::Sent)
        } else {
            Ok(WriteOutcome::Failed)
        }
    }

    /// Arm a read for the next acknowledgment of the current epoch.
    pub fn arm_read(&mut self) -> Result<(), ContractViolation> {
        if self.read_armed || self.pending_response.is_some() {
            return Err(ContractViolation::DoubleRead { target: self.target });
        }
        self.read_armed = true;
        Ok(())
    }

    /// An armed read can complete when an acknowledgment is waiting.
    pub fn read_completable(&self) -> bool {
        self.connected && self.read_armed && !self.acks.is_empty()
    }

    /// Move the next in-flight ack into the response slot. Caller surfaces
    /// the read tag.
    pub fn complete_read(&mut self) -> Ack {
        debug_assert!(self.read_completable());
        let ack = self.acks.pop_front().expect("read_completable checked");
        self.pending_response = Some(ack);
        self.read_armed = false;
        ack
    }

    /// Consume the write completion (the tag was taken off the queue).
    pub fn write_completed(&mut self) {
        self.write_outstanding = false;
    }

    /// Tear the epoch down: everything in flight dies with it. Returns the
    /// kinds of operations that were outstanding so the transport can
    /// surface failure tags in fail-tags mode. A read that already completed
    /// into the response slot is not outstanding; its success tag is on the
    /// completion queue and remains consumable until the epoch changes.
    pub fn teardown(&mut self) -> Vec<TagKind> {
        let mut pending = Vec::new();
        if self.write_outstanding {
            pending.push(TagKind::Write);
            self.write_outstanding = false;
        }
        if self.read_armed {
            pending.push(TagKind::Read);
            self.read_armed = false;
        }
        self.connected = false;
        self.inflight.clear();
        self.acks.clear();
        pending
    }

    /// Re-establish the stream under a fresh epoch with both directions idle.
    pub fn reconnect(&mut self) -> u32 {
        self.epoch += 1;
        self.connected = true;
        self.write_ready = true;
        self.read_ready = true;
        self.pending_response = None;
        self.read_armed = false;
        self.write_outstanding = false;
        self.inflight.clear();
        self.acks.clear();
        self.epoch
    }
}

/// Durable core of a simulated target (storage shard). Applying an entry and
/// recording its index happen atomically; both survive a crash.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SimTarget {
    pub id: TargetId,
    pub alive: bool,
    /// Index of the last consumed entry (real or dummy). Durable.
    pub persisted_index: u64,
    /// Progress the target already had when the run began; entries at or
    /// below this are not owed.
    pub initial_persisted: u64,
    /// Indexes of real entries applied during this run, in order. Durable.
    /// Payloads are recoverable from the log by index, so only indexes are
    /// stored.
    pub applied: Vec<u64>,
    /// Messages consumed from the current batch since the last ack, for
    /// ack batching.
    pub since_ack: u32,
}

impl SimTarget {
    pub fn new(id: TargetId) -> SimTarget {
        SimTarget::with_progress(id, 0)
    }

    /// Restart with prior progress, as if the engine came up against a
    /// target that already consumed through `persisted`.
    pub fn with_progress(id: TargetId, persisted: u64) -> SimTarget {
        SimTarget {
            id,
            alive: true,
            persisted_index: persisted,
            initial_persisted: persisted,
            applied: Vec::new(),
            since_ack: 0,
        }
    }

    /// Durable truth a reconnect asks for.
    pub fn last_ack(&self) -> u64 {
        self.persisted_index
    }

    /// Crash: volatile state (the ack counter) is lost, durable state is not.
    pub fn crash(&mut self) {
        self.alive = false;
        self.since_ack = 0;
    }

    pub fn restart(&mut self) {
        self.alive = true;
    }
}
