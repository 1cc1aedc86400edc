//! Restart and reconnect decisions.
//!
//! Three situations are handled: the whole engine restarting (resume the main
//! stream from the minimum acknowledged index across targets), a single
//! target reconnecting (bump its term and replay exactly the range it
//! missed), and targets that idle so long their acknowledged index falls far
//! behind (send payload-free dummy messages to drag it forward, which keeps
//! both restart cases cheap).

use crate::queue::TargetId;

/// Tuning for the dummy-entry optimization and batch formation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecoveryConfig {
    /// Emit dummies after every `dummy_interval` main-stream dispatches, to
    /// targets lagging more than that many entries. `None` disables them.
    pub dummy_interval: Option<u32>,
    pub max_batch_size: u32,
}

impl Default for RecoveryConfig {
    fn default() -> RecoveryConfig {
        RecoveryConfig {
            dummy_interval: Some(10),
            max_batch_size: 4,
        }
    }
}

/// Health-checker verdicts, delivered serially and alternating per target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HealthKind {
    Down,
    Up,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HealthEvent {
    pub target: TargetId,
    pub kind: HealthKind,
    /// Harness step at which the event fired.
    pub step: u64,
}

/// Where a restarted engine's main stream begins: one past the smallest
/// acknowledged index, so no target can miss an entry.
pub fn restart_start_index(last_acks: &[u64]) -> u64 {
    last_acks.iter().copied().min().unwrap_or(0) + 1
}

/// The bounded range a reconnecting target must replay, or `None` when it
/// missed nothing. `current_index` must be read under the dispatch lock so
/// the boundary with the live main stream is exact.
pub fn recovery_range(last_ack: u64, current_index: u64) -> Option<(u64, u64)> {
    if last_ack < current_index {
        Some((last_ack + 1, current_index))
    } else {
        None
    }
}

/// Whether a target has fallen far enough behind to warrant a dummy.
pub fn needs_dummy(last_ack: u64, current_index: u64, interval: u32) -> bool {
    current_index > u64::from(interval) && last_ack < current_index - u64::from(interval)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn restart_uses_minimum_ack() {
        assert_eq!(restart_start_index(&[5, 3]), 4);
        assert_eq!(restart_start_index(&[0, 0, 0]), 1);
        assert_eq!(restart_start_index(&[7]), 8);
    }

    #[test]
    fn recovery_range_is_exclusive_of_acked() {
        assert_eq!(recovery_range(3, 7), Some((4, 7)));
        assert_eq!(recovery_range(7, 7), None);
        assert_eq!(recovery_range(9, 7), None);
        assert_eq!(recovery_range(0, 1), Some((1, 1)));
    }

    #[test]
    fn dummy_threshold_is_strict() {
        assert!(needs_dummy(2, 13, 10));
        assert!(!needs_dummy(3, 13, 10));
        assert!(!needs_dummy(0, 10, 10));
        assert!(needs_dummy(0, 11, 10));
    }
}
