//! Append-only log service and the fetcher specifications that read it.
//!
//! The log stands in for a replicated, durable commit log: entries are
//! immutable once appended, indexes are dense starting at 1, and the whole
//! structure survives an engine restart (the engine only ever holds a
//! reference to it). Append latency is injectable so the simulator can model
//! replication/fsync pauses.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use crate::queue::TargetId;

/// Compact membership set: bit `t` is set when target `t` must apply the
/// entry. Engines cap targets well below 32.
pub const MAX_TARGETS: u16 = 32;

/// One write-ahead-log record: a dense index, the set of targets that must
/// apply it, and each target's slice of the mutation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEntry {
    pub index: u64,
    pub target_ids: BTreeSet<TargetId>,
    /// Parallel to `target_ids` (ascending); `payloads[i]` belongs to the
    /// i-th target in the set.
    pub payloads: Vec<Arc<[u8]>>,
    /// Monotonic timestamp (ns) stamped at append.
    pub commit_time: u64,
    pub is_dummy: bool,
    mask: u32,
}

impl LogEntry {
    fn mask_of(ids: &BTreeSet<TargetId>) -> u32 {
        ids.iter().fold(0u32, |m, &t| {
            debug_assert!(t < MAX_TARGETS);
            m | (1 << t)
        })
    }

    pub fn new(
        index: u64,
        target_ids: BTreeSet<TargetId>,
        payloads: Vec<Arc<[u8]>>,
        commit_time: u64,
    ) -> LogEntry {
        assert!(index >= 1, "log indexes start at 1");
        assert!(!target_ids.is_empty(), "entries must address at least one target");
        assert_eq!(
            target_ids.len(),
            payloads.len(),
            "payloads must be keyed exactly by the target set"
        );
        let mask = Self::mask_of(&target_ids);
        LogEntry {
            index,
            target_ids,
            payloads,
            commit_time,
            is_dummy: false,
            mask,
        }
    }

    /// Payload-free index advancement for a single target. Never appended to
    /// a log; recovery synthesizes these and pushes them straight to queues.
    pub fn dummy(index: u64, target: TargetId, commit_time: u64) -> LogEntry {
        let target_ids: BTreeSet<TargetId> = [target].into_iter().collect();
        let mask = Self::mask_of(&target_ids);
        LogEntry {
            index,
            target_ids,
            payloads: vec![Arc::from(&[][..])],
            commit_time,
            is_dummy: true,
            mask,
        }
    }

    pub fn targets_mask(&self) -> u32 {
        self.mask
    }

    pub fn contains_target(&self, t: TargetId) -> bool {
        self.mask & (1 << t) != 0
    }

    /// This target's slice of the mutation. Empty for dummies and
    /// non-members.
    pub fn payload_for(&self, t: TargetId) -> Arc<[u8]> {
        self.target_ids
            .iter()
            .position(|&id| id == t)
            .map(|i| self.payloads[i].clone())
            .unwrap_or_else(|| Arc::from(&[][..]))
    }

    pub fn payload_bytes(&self) -> usize {
        self.payloads.iter().map(|p| p.len()).sum()
    }
}

/// Injectable append delay, in virtual nanoseconds per append.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AppendLatency {
    pub base_ns: u64,
    pub jitter_ns: u64,
}

/// In-memory durable log. Reads of appended entries are referentially
/// stable; a read past the end reports "not yet available" rather than
/// failing, because fetchers block and retry on that condition.
#[derive(Debug, Clone, Default)]
pub struct LogService {
    entries: Vec<Arc<LogEntry>>,
    pub append_latency: AppendLatency,
}

impl LogService {
    pub fn new() -> LogService {
        LogService::default()
    }

    pub fn with_latency(append_latency: AppendLatency) -> LogService {
        LogService {
            entries: Vec::new(),
            append_latency,
        }
    }

    pub fn len(&self) -> u64 {
        self.entries.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Append a new entry addressed at `target_ids`, stamping `now_ns` as its
    /// commit time. Returns the assigned index (previous length + 1).
    pub fn append(
        &mut self,
        target_ids: BTreeSet<TargetId>,
        payloads: Vec<Arc<[u8]>>,
        now_ns: u64,
    ) -> u64 {
        let index = self.entries.len() as u64 + 1;
        let entry = LogEntry::new(index, target_ids, payloads, now_ns);
        self.entries.push(Arc::new(entry));
        index
    }

    /// Entry at `index`, or `None` when that index has not been appended yet.
    pub fn read(&self, index: u64) -> Option<Arc<LogEntry>> {
        if index == 0 {
            return None;
        }
        self.entries.get(index as usize - 1).cloned()
    }

    /// Membership bitmask for `index`; 0 when not yet available.
    pub fn targets_mask(&self, index: u64) -> u32 {
        self.read(index).map_or(0, |e| e.targets_mask())
    }

    /// Smallest index `> after` that addresses target `t`, or `None` when no
    /// such entry exists yet. This is the brute-force delivery oracle used by
    /// the harness: it is computed from the log alone.
    pub fn next_index_for(&self, t: TargetId, after: u64) -> Option<u64> {
        let start = after as usize; // entry `after + 1` lives at slot `after`
        self.entries[start.min(self.entries.len())..]
            .iter()
            .find(|e| e.contains_target(t))
            .map(|e| e.index)
    }

    /// Serialize the log as line-delimited records: index, target set,
    /// per-target payload sizes, commit time.
    pub fn write_records<W: Write>(&self, w: &mut W) -> io::Result<()> {
        for e in &self.entries {
            let targets: Vec<String> = e.target_ids.iter().map(|t| t.to_string()).collect();
            let sizes: Vec<String> = e.payloads.iter().map(|p| p.len().to_string()).collect();
            writeln!(
                w,
                "entry index={} targets={} sizes={} commit={}",
                e.index,
                targets.join(","),
                sizes.join(","),
                e.commit_time
            )?;
        }
        Ok(())
    }
}

/// What kind of stream a fetcher feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FetcherKind {
    /// The unbounded main stream; runs for the lifetime of the engine.
    Normal,
    /// A bounded replay of the range one recovering target missed.
    Recovery,
}

/// A fetcher activation: where to start, where to stop, and (for recovery
/// streams) which target it serves under which term.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FetcherSpec {
    pub kind: FetcherKind,
    pub start_index: u64,
    /// `None` means unbounded; only legal for the main stream.
    pub end_index: Option<u64>,
    /// Recovery streams serve exactly one target.
    pub target: Option<TargetId>,
    /// Recovery term the stream was created under; main streams carry none
    /// and are treated as always current.
    pub term: Option<u32>,
}

impl FetcherSpec {
    pub fn normal(start_index: u64) -> FetcherSpec {
        FetcherSpec {
            kind: FetcherKind::Normal,
            start_index,
            end_index: None,
            target: None,
            term: None,
        }
    }

    pub fn recovery(start_index: u64, end_index: u64, target: TargetId, term: u32) -> FetcherSpec {
        FetcherSpec {
            kind: FetcherKind::Recovery,
            start_index,
            end_index: Some(end_index),
            target: Some(target),
            term: Some(term),
        }
    }

    /// Structural validity; an empty recovery range (end = start - 1) is
    /// permitted and completes immediately.
    pub fn validate(&self) -> Result<(), SpecError> {
        if self.start_index == 0 {
            return Err(SpecError::ZeroStart);
        }
        match self.kind {
            FetcherKind::Normal => {
                if self.end_index.is_some() {
                    return Err(SpecError::BoundedNormal);
                }
            }
            FetcherKind::Recovery => {
                let end = self.end_index.ok_or(SpecError::UnboundedRecovery)?;
                if end + 1 < self.start_index {
                    return Err(SpecError::BackwardsRange);
                }
                if self.target.is_none() || self.term.is_none() {
                    return Err(SpecError::IncompleteRecovery);
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SpecError {
    #[error("fetchers start at index 1 or later")]
    ZeroStart,
    #[error("the main stream must be unbounded")]
    BoundedNormal,
    #[error("recovery streams must be bounded")]
    UnboundedRecovery,
    #[error("recovery range ends before it starts")]
    BackwardsRange,
    #[error("recovery streams need a target and a term")]
    IncompleteRecovery,
}

impl fmt::Display for FetcherKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FetcherKind::Normal => f.write_str("normal"),
            FetcherKind::Recovery => f.write_str("recovery"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn targets(ids: &[TargetId]) -> BTreeSet<TargetId> {
        ids.iter().copied().collect()
    }

    fn payloads(n: usize) -> Vec<Arc<[u8]>> {
        (0..n).map(|_| Arc::from(&[][..])).collect()
    }

    #[test]
    fn first_append_gets_index_one() {
        let mut log = LogService::new();
        let idx = log.append(targets(&[1, 2]), payloads(2), 10);
        assert_eq!(idx, 1);
    }

    #[test]
    fn appends_are_dense() {
        let mut log = LogService::new();
        for expect in 1..=3 {
            let idx = log.append(targets(&[0]), payloads(1), 0);
            assert_eq!(idx, expect);
        }
        assert_eq!(log.len(), 3);
    }

    #[test]
    fn read_returns_the_appended_entry() {
        let mut log = LogService::new();
        log.append(targets(&[0, 3]), payloads(2), 42);
        let e = log.read(1).unwrap();
        assert_eq!(e.index, 1);
        assert_eq!(e.commit_time, 42);
        assert!(e.contains_target(0));
        assert!(e.contains_target(3));
        assert!(!e.contains_target(1));
    }

    #[test]
    fn read_past_end_is_not_yet_available() {
        let mut log = LogService::new();
        for _ in 0..3 {
            log.append(targets(&[0]), payloads(1), 0);
        }
        assert!(log.read(5).is_none());
        assert!(log.read(0).is_none());
    }

    #[test]
    fn reads_are_referentially_stable() {
        let mut log = LogService::new();
        log.append(targets(&[0]), payloads(1), 0);
        let a = log.read(1).unwrap();
        let b = log.read(1).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
    }

    #[test]
    fn next_index_for_filters_by_membership() {
        let mut log = LogService::new();
        log.append(targets(&[0]), payloads(1), 0); // 1
        log.append(targets(&[1]), payloads(1), 0); // 2
        log.append(targets(&[0, 1]), payloads(2), 0); // 3
        assert_eq!(log.next_index_for(0, 0), Some(1));
        assert_eq!(log.next_index_for(0, 1), Some(3));
        assert_eq!(log.next_index_for(1, 0), Some(2));
        assert_eq!(log.next_index_for(1, 2), Some(3));
        assert_eq!(log.next_index_for(1, 3), None);
    }

    #[test]
    fn dummy_entries_are_single_target_and_empty() {
        let d = LogEntry::dummy(12, 3, 0);
        assert!(d.is_dummy);
        assert_eq!(d.target_ids.len(), 1);
        assert_eq!(d.payload_bytes(), 0);
    }

    #[test]
    fn record_serialization_is_line_per_entry() {
        let mut log = LogService::new();
        log.append(targets(&[0, 2]), vec![Arc::from(&[1u8][..]), Arc::from(&[2u8, 3][..])], 7);
        let mut out = Vec::new();
        log.write_records(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text, "entry index=1 targets=0,2 sizes=1,2 commit=7\n");
    }

    #[test]
    fn fetcher_spec_validation() {
        assert!(FetcherSpec::normal(1).validate().is_ok());
        assert!(FetcherSpec::recovery(3, 5, 1, 2).validate().is_ok());
        // empty range permitted
        assert!(FetcherSpec::recovery(4, 3, 1, 2).validate().is_ok());
        assert_eq!(
            FetcherSpec::recovery(5, 3, 1, 2).validate(),
            Err(SpecError::BackwardsRange)
        );
        assert_eq!(FetcherSpec::normal(0).validate(), Err(SpecError::ZeroStart));
        let mut bounded_normal = FetcherSpec::normal(1);
        bounded_normal.end_index = Some(4);
        assert_eq!(bounded_normal.validate(), Err(SpecError::BoundedNormal));
    }
}
