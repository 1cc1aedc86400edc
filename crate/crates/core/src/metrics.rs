//! Per-entry delivery timestamps and the derived delay distributions.
//!
//! Three moments are stamped for every entry: commit (appended to the log),
//! dispatch (the engine started processing it), and apply (a target consumed
//! it; one per target). Two delays fall out: the *apply delay*
//! (apply − commit, the end-to-end figure) and the *relay delay*
//! (apply − dispatch, the engine's own processing and delivery time).
//! Percentiles use the nearest-rank method.

use std::io::{self, Write};

use crate::queue::TargetId;

/// Timestamps for one (entry, target) delivery, in nanoseconds on a single
/// monotonic clock (virtual in simulation, real in the threaded engine).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EntryRecord {
    pub index: u64,
    pub target: TargetId,
    pub commit_ns: u64,
    pub dispatch_ns: u64,
    pub apply_ns: u64,
}

impl EntryRecord {
    pub fn apply_delay(&self) -> u64 {
        self.apply_ns.saturating_sub(self.commit_ns)
    }

    pub fn relay_delay(&self) -> u64 {
        self.apply_ns.saturating_sub(self.dispatch_ns)
    }

    /// Causality of the three stamps.
    pub fn ordered(&self) -> bool {
        self.commit_ns <= self.dispatch_ns && self.dispatch_ns <= self.apply_ns
    }
}

/// Aggregates of one delay series, nearest-rank percentiles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelaySummary {
    pub count: usize,
    pub mean_ns: f64,
    pub median_ns: u64,
    pub p90_ns: u64,
    pub p99_ns: u64,
    pub max_ns: u64,
}

impl DelaySummary {
    pub fn compute(series: &[u64]) -> Option<DelaySummary> {
        if series.is_empty() {
            return None;
        }
        let mut sorted = series.to_vec();
        sorted.sort_unstable();
        let nearest = |p: f64| -> u64 {
            // nearest-rank: smallest value with at least ceil(p*n) values <= it
            let rank = (p * sorted.len() as f64).ceil() as usize;
            sorted[rank.clamp(1, sorted.len()) - 1]
        };
        let sum: u128 = sorted.iter().map(|&v| v as u128).sum();
        Some(DelaySummary {
            count: sorted.len(),
            mean_ns: sum as f64 / sorted.len() as f64,
            median_ns: nearest(0.50),
            p90_ns: nearest(0.90),
            p99_ns: nearest(0.99),
            max_ns: *sorted.last().unwrap(),
        })
    }

    fn row(&self, label: &str) -> String {
        let ms = |ns: u64| ns as f64 / 1e6;
        format!(
            "{label:<12} n={:<8} mean={:>9.3}ms median={:>9.3}ms p90={:>9.3}ms p99={:>9.3}ms max={:>9.3}ms",
            self.count,
            self.mean_ns / 1e6,
            ms(self.median_ns),
            ms(self.p90_ns),
            ms(self.p99_ns),
            ms(self.max_ns),
        )
    }
}

/// Full measurement set of one run.
#[derive(Debug, Clone, Default)]
pub struct Metrics {
    pub records: Vec<EntryRecord>,
}

impl Metrics {
    pub fn push(&mut self, record: EntryRecord) {
        self.records.push(record);
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Every record must satisfy commit ≤ dispatch ≤ apply.
    pub fn validate_ordering(&self) -> Result<(), String> {
        for r in &self.records {
            if !r.ordered() {
                return Err(format!(
                    "entry {} target {}: commit={} dispatch={} apply={} out of order",
                    r.index, r.target, r.commit_ns, r.dispatch_ns, r.apply_ns
                ));
            }
        }
        Ok(())
    }

    pub fn apply_delays(&self) -> Vec<u64> {
        self.records.iter().map(|r| r.apply_delay()).collect()
    }

    pub fn relay_delays(&self) -> Vec<u64> {
        self.records.iter().map(|r| r.relay_delay()).collect()
    }

    pub fn apply_summary(&self) -> Option<DelaySummary> {
        DelaySummary::compute(&self.apply_delays())
    }

    pub fn relay_summary(&self) -> Option<DelaySummary> {
        DelaySummary::compute(&self.relay_delays())
    }

    /// Human-readable aggregate block.
    pub fn summary_table(&self) -> String {
        let mut out = String::new();
        match self.relay_summary() {
            Some(s) => {
                out.push_str(&s.row("relay-delay"));
                out.push('\n');
            }
            None => out.push_str("relay-delay  (no records)\n"),
        }
        if let Some(s) = self.apply_summary() {
            out.push_str(&s.row("apply-delay"));
            out.push('\n');
        }
        out
    }

    /// Machine-readable records: one line per (entry, target), then an
    /// aggregate summary block.
    pub fn write_records<W: Write>(&self, w: &mut W) -> io::Result<()> {
        for r in &self.records {
            writeln!(
                w,
                "record idx={} t={} commit={} dispatch={} apply={} relay_delay={} apply_delay={}",
                r.index,
                r.target,
                r.commit_ns,
                r.dispatch_ns,
                r.apply_ns,
                r.relay_delay(),
                r.apply_delay()
            )?;
        }
        for (label, summary) in [
            ("relay_delay", self.relay_summary()),
            ("apply_delay", self.apply_summary()),
        ] {
            if let Some(s) = summary {
                writeln!(
                    w,
                    "summary kind={label} count={} mean_ns={:.1} median_ns={} p90_ns={} p99_ns={} max_ns={}",
                    s.count, s.mean_ns, s.median_ns, s.p90_ns, s.p99_ns, s.max_ns
                )?;
            }
        }
        Ok(())
    }
}
