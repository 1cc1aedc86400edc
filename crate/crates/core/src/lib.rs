//! Exactly-once, in-order delivery of write-ahead-log entries to storage
//! shards.
//!
//! The engine tails an append-only log and streams each entry's per-target
//! mutation to the shard ("target") that owns it, over one asynchronous
//! bidirectional stream per target driven by a single completion queue.
//! Per-target queues isolate slow or dead targets, a term-guarded recovery
//! path replays exactly the range a restarted target missed, and payload-free
//! dummy entries keep idle targets' acknowledged indexes close to the log
//! head so restarts stay cheap.
//!
//! Verification machinery lives alongside the engine:
//!
//! * [`sim`] — a deterministic simulator driving the whole system one atomic
//!   step at a time from a seeded RNG, with scheduled fault injection.
//! * [`explorer`] — an exhaustive breadth-first enumeration of every step
//!   interleaving within small bounds, checking delivery safety on each step
//!   and full delivery on each terminal state.
//! * [`fuzz`] — randomized scenario generation over the simulator.
//! * [`live`] — the real threaded configuration used for latency
//!   measurement.

pub mod explorer;
pub mod fuzz;
pub mod live;
pub mod log;
pub mod metrics;
pub mod queue;
pub mod recovery;
pub mod scenario;
pub mod sim;
pub mod system;
pub mod trace;
pub mod transport;

pub use log::{FetcherKind, FetcherSpec, LogEntry, LogService};
pub use queue::{
    Batch, Message, Mutation, PoppedBatches, PushOutcome, QueueState, TargetId, TargetQueue,
};
pub use system::{Step, SystemConfig, SystemState, Violation};
pub use transport::{Ack, CompletionTag, CqFailureMode, SimTarget, StreamState, TagKind};
