//! Line-delimited run traces.
//!
//! Every simulated run can emit one line per observable event, in step order,
//! with stable field ordering. Traces serve three purposes: byte-for-byte
//! determinism checks (same scenario + seed ⇒ same bytes), counterexample
//! replay context, and independent post-hoc verification — the recovery-range
//! checker below recomputes what each reconnect should have replayed using
//! only raw target-side and dispatcher-side events, then compares that
//! against the recovery stream the engine actually created.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;

use crate::queue::{PushOutcome, TargetId};
use crate::system::StepObserver;
use crate::transport::CompletionTag;

/// Observer that renders events as trace lines into an in-memory buffer.
/// Callers prefix each burst of lines with the scheduler step (see
/// [`TraceRecorder::begin_step`]).
#[derive(Debug, Default)]
pub struct TraceRecorder {
    buf: String,
    step: u64,
}

impl TraceRecorder {
    pub fn new() -> TraceRecorder {
        TraceRecorder::default()
    }

    pub fn begin_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn into_string(self) -> String {
        self.buf
    }

    pub fn as_str(&self) -> &str {
        &self.buf
    }

    fn line(&mut self, args: fmt::Arguments<'_>) {
        let _ = write!(self.buf, "s={} ", self.step);
        let _ = self.buf.write_fmt(args);
        self.buf.push('\n');
    }

    /// Events outside the step model (appends, fault injections) also land
    /// in the trace.
    pub fn appended(&mut self, index: u64, targets: &[TargetId], bytes: usize, commit: u64) {
        let ids: Vec<String> = targets.iter().map(|t| t.to_string()).collect();
        self.line(format_args!(
            "append idx={index} targets={} bytes={bytes} commit={commit}",
            ids.join(",")
        ));
    }

    pub fn fault_injected(&mut self, what: &str, target: Option<TargetId>) {
        match target {
            Some(t) => self.line(format_args!("fault kind={what} t={t}")),
            None => self.line(format_args!("fault kind={what}")),
        }
    }

    pub fn note(&mut self, text: &str) {
        self.line(format_args!("{text}"));
    }
}

impl StepObserver for TraceRecorder {
    fn dispatched(&mut self, index: u64, is_normal: bool, current_index: u64) {
        let kind = if is_normal { "normal" } else { "recovery" };
        self.line(format_args!("dispatch idx={index} kind={kind} ci={current_index}"));
    }

    fn pushed(
        &mut self,
        t: TargetId,
        msg: &crate::queue::Message,
        is_normal: bool,
        term: u32,
        outcome: PushOutcome,
    ) {
        let lane = if is_normal { "normal" } else { "recovery" };
        let res = match outcome {
            PushOutcome::QueuedNormal => "queued-normal",
            PushOutcome::QueuedCatchup => "queued-catchup",
            PushOutcome::DroppedSuspended => "dropped-suspended",
            PushOutcome::DroppedStaleTerm => "dropped-stale-term",
        };
        self.line(format_args!(
            "push t={t} idx={} dummy={} lane={lane} term={term} outcome={res}",
            msg.index,
            u8::from(msg.is_dummy)
        ));
    }

    fn wrote(&mut self, t: TargetId, epoch: u32, batch: &crate::queue::Batch, sent: bool) {
        self.line(format_args!(
            "write t={t} ep={epoch} first={} last={} n={} sent={}",
            batch.first_index().unwrap_or(0),
            batch.last_index().unwrap_or(0),
            batch.len(),
            u8::from(sent)
        ));
    }

    fn tag_surfaced(&mut self, tag: CompletionTag) {
        self.line(format_args!(
            "tag t={} kind={} ep={} ok={}",
            tag.target,
            match tag.kind {
                crate::transport::TagKind::Write => "write",
                crate::transport::TagKind::Read => "read",
            },
            tag.epoch,
            u8::from(tag.ok)
        ));
    }

    fn tag_consumed(&mut self, tag: CompletionTag, stale: bool) {
        self.line(format_args!(
            "tag-consume t={} kind={} ep={} ok={} stale={}",
            tag.target,
            match tag.kind {
                crate::transport::TagKind::Write => "write",
                crate::transport::TagKind::Read => "read",
            },
            tag.epoch,
            u8::from(tag.ok),
            u8::from(stale)
        ));
    }

    fn consumed(&mut self, t: TargetId, index: u64, is_dummy: bool) {
        self.line(format_args!(
            "consume t={t} idx={index} dummy={}",
            u8::from(is_dummy)
        ));
    }

    fn ack_emitted(&mut self, t: TargetId, epoch: u32, index: u64) {
        self.line(format_args!("ack-emit t={t} ep={epoch} idx={index}"));
    }

    fn ack_completed(&mut self, t: TargetId, epoch: u32, index: u64) {
        self.line(format_args!("ack-complete t={t} ep={epoch} idx={index}"));
    }

    fn ack_recorded(&mut self, t: TargetId, index: u64) {
        self.line(format_args!("ack-record t={t} idx={index}"));
    }

    fn crashed(&mut self, t: TargetId) {
        self.line(format_args!("down t={t}"));
    }

    fn suspended(&mut self, t: TargetId, stats: crate::queue::SuspendStats, popped_cleared: usize) {
        self.line(format_args!(
            "suspend t={t} dropped-normal={} dropped-catchup={} popped-cleared={popped_cleared}",
            stats.dropped_normal, stats.dropped_catchup
        ));
    }

    fn restarted(&mut self, t: TargetId, persisted: u64) {
        self.line(format_args!("target-restart t={t} persisted={persisted}"));
    }

    fn reconnected(&mut self, t: TargetId, epoch: u32, term: u32, last_ack: u64, current_index: u64) {
        self.line(format_args!(
            "up t={t} ep={epoch} term={term} lastack={last_ack} ci={current_index}"
        ));
    }

    fn recovery_spawned(&mut self, t: TargetId, start: u64, end: u64, term: u32) {
        self.line(format_args!("rfetch t={t} start={start} end={end} term={term}"));
    }

    fn fetching_completed(
        &mut self,
        t: TargetId,
        term: u32,
        outcome: crate::queue::FetchingCompletedOutcome,
    ) {
        let res = match outcome {
            crate::queue::FetchingCompletedOutcome::Ignored => "ignored",
            crate::queue::FetchingCompletedOutcome::ToNormal => "to-normal",
            crate::queue::FetchingCompletedOutcome::CatchupPending => "catchup-pending",
        };
        self.line(format_args!("fcomplete t={t} term={term} outcome={res}"));
    }

    fn dummy_emitted(&mut self, t: TargetId, index: u64) {
        self.line(format_args!("dummy t={t} idx={index}"));
    }

    fn dummy_check(&mut self, current_index: u64, last_acks: &[u64]) {
        let acks: Vec<String> = last_acks.iter().map(|a| a.to_string()).collect();
        self.line(format_args!(
            "dummy-check ci={current_index} lastacks={}",
            acks.join(",")
        ));
    }

    fn replayer_restarted(&mut self, start_index: u64, last_acks: &[u64]) {
        let acks: Vec<String> = last_acks.iter().map(|a| a.to_string()).collect();
        self.line(format_args!(
            "replayer-restart start={start_index} lastacks={}",
            acks.join(",")
        ));
    }
}

/// One reconnect as reconstructed from raw trace events.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReconnectCheck {
    pub target: TargetId,
    /// Persisted index derived from target-side consume events only.
    pub derived_persisted: u64,
    /// Highest normal dispatch before the reconnect, from dispatcher events
    /// only.
    pub derived_current_index: u64,
    /// The range the engine actually created, if any.
    pub actual_range: Option<(u64, u64)>,
}

impl ReconnectCheck {
    /// The range that should have been replayed, derived without consulting
    /// any engine state.
    pub fn expected_range(&self) -> Option<(u64, u64)> {
        if self.derived_persisted < self.derived_current_index {
            Some((self.derived_persisted + 1, self.derived_current_index))
        } else {
            None
        }
    }

    pub fn holds(&self) -> bool {
        self.actual_range == self.expected_range()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TraceError {
    #[error("line {line}: malformed trace record: {text}")]
    Malformed { line: usize, text: String },
}

fn field<'a>(parts: &[&'a str], key: &str) -> Option<&'a str> {
    parts
        .iter()
        .find_map(|p| p.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
}

fn num_field(parts: &[&str], key: &str) -> Option<u64> {
    field(parts, key).and_then(|v| v.parse().ok())
}

/// Recompute every reconnect decision from a trace, independently of the
/// engine: the persisted index comes from `consume` events, the dispatch
/// frontier from `dispatch kind=normal` events (reset by replayer restarts),
/// and each `up` is matched against the `rfetch` that follows it in the same
/// atomic step, or against its absence.
///
/// `initial_acks` seeds per-target progress for runs that started against
/// targets with prior consumption.
pub fn check_recovery_ranges(
    trace: &str,
    initial_acks: &[u64],
) -> Result<Vec<ReconnectCheck>, TraceError> {
    let mut persisted: BTreeMap<TargetId, u64> = BTreeMap::new();
    for (t, &p) in initial_acks.iter().enumerate() {
        persisted.insert(t as TargetId, p);
    }
    let mut frontier: u64 = initial_acks.iter().copied().min().unwrap_or(0);
    let mut checks: Vec<ReconnectCheck> = Vec::new();
    let mut open: Option<usize> = None; // index into checks awaiting an rfetch

    for (lineno, raw) in trace.lines().enumerate() {
        let parts: Vec<&str> = raw.split_whitespace().collect();
        let malformed = || TraceError::Malformed {
            line: lineno + 1,
            text: raw.to_string(),
        };
        let Some(kind) = parts.get(1) else { continue };
        match *kind {
            "dispatch" => {
                if field(&parts, "kind") == Some("normal") {
                    frontier = num_field(&parts, "idx").ok_or_else(malformed)?;
                }
            }
            "consume" => {
                let t = num_field(&parts, "t").ok_or_else(malformed)? as TargetId;
                let idx = num_field(&parts, "idx").ok_or_else(malformed)?;
                persisted.insert(t, idx);
            }
            "replayer-restart" => {
                let start = num_field(&parts, "start").ok_or_else(malformed)?;
                frontier = start - 1;
                open = None;
            }
            "up" => {
                let t = num_field(&parts, "t").ok_or_else(malformed)? as TargetId;
                checks.push(ReconnectCheck {
                    target: t,
                    derived_persisted: persisted.get(&t).copied().unwrap_or(0),
                    derived_current_index: frontier,
                    actual_range: None,
                });
                open = Some(checks.len() - 1);
            }
            "rfetch" => {
                let t = num_field(&parts, "t").ok_or_else(malformed)? as TargetId;
                let start = num_field(&parts, "start").ok_or_else(malformed)?;
                let end = num_field(&parts, "end").ok_or_else(malformed)?;
                let slot = open.take().ok_or_else(malformed)?;
                if checks[slot].target != t {
                    return Err(malformed());
                }
                checks[slot].actual_range = Some((start, end));
            }
            _ => {}
        }
    }
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovery_checker_matches_well_formed_trace() {
        let trace = "\
s=1 dispatch idx=1 kind=normal ci=1
s=2 consume t=0 idx=1 dummy=0
s=3 dispatch idx=2 kind=normal ci=2
s=4 down t=0
s=5 suspend t=0 dropped-normal=1 dropped-catchup=0 popped-cleared=0
s=6 target-restart t=0 persisted=1
s=7 up t=0 ep=2 term=2 lastack=1 ci=2
s=7 rfetch t=0 start=2 end=2 term=2
";
        let checks = check_recovery_ranges(trace, &[0]).unwrap();
        assert_eq!(checks.len(), 1);
        assert_eq!(checks[0].derived_persisted, 1);
        assert_eq!(checks[0].derived_current_index, 2);
        assert_eq!(checks[0].expected_range(), Some((2, 2)));
        assert!(checks[0].holds());
    }

    #[test]
    fn recovery_checker_flags_wrong_range() {
        let trace = "\
s=1 dispatch idx=1 kind=normal ci=1
s=2 down t=0
s=3 suspend t=0 dropped-normal=1 dropped-catchup=0 popped-cleared=0
s=4 target-restart t=0 persisted=0
s=5 up t=0 ep=2 term=2 lastack=0 ci=1
s=5 rfetch t=0 start=2 end=2 term=2
";
        let checks = check_recovery_ranges(trace, &[0]).unwrap();
        assert_eq!(checks[0].expected_range(), Some((1, 1)));
        assert!(!checks[0].holds());
    }

    #[test]
    fn recovery_checker_accepts_skipped_recovery() {
        let trace = "\
s=1 dispatch idx=1 kind=normal ci=1
s=2 consume t=0 idx=1 dummy=0
s=3 down t=0
s=4 suspend t=0 dropped-normal=0 dropped-catchup=0 popped-cleared=0
s=5 target-restart t=0 persisted=1
s=6 up t=0 ep=2 term=2 lastack=1 ci=1
";
        let checks = check_recovery_ranges(trace, &[0]).unwrap();
        assert_eq!(checks[0].expected_range(), None);
        assert!(checks[0].holds());
    }
}
