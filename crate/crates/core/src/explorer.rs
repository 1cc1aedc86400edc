//! Exhaustive interleaving exploration within small bounds.
//!
//! The explorer runs breadth-first search over the reachable states of
//! [`SystemState`] under a synthetic workload of `nmessages` entries, each
//! addressed at every target, with up to `nfailures` crash/recovery cycles
//! per run injected at every legal point. Initial states range over every
//! prior-progress start (`last_ack ∈ [0, nmessages]`), modeling an engine
//! that restarted against targets with earlier consumption.
//!
//! Checked on every transition:
//! * delivery safety — each consumed message matches the log-derived oracle
//!   (no duplicate, no gap, no out-of-order apply);
//! * acknowledgment monotonicity;
//! * the queue state-transition closure;
//! * transport discipline (single outstanding operation per direction).
//!
//! Checked on every terminal state (no step enabled): every entry applied by
//! every target and all acknowledgments propagated — the bounded analogue of
//! "eventually everything is delivered". A terminal state that fails this is
//! reported as a stuck counterexample.
//!
//! Counterexamples are minimal-depth step sequences and replay exactly.

use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;
use std::sync::Arc;

use crate::queue::{Mutation, QueueState, TargetId};
use crate::recovery::RecoveryConfig;
use crate::system::{NullObserver, Step, SyntheticLog, SystemConfig, SystemState, Violation};
use crate::transport::CqFailureMode;

/// Bounds and knobs of one exploration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExplorerConfig {
    pub nmessages: u32,
    pub nfailures: u32,
    pub targets: u16,
    pub batch_size: u32,
    pub ack_batching: u32,
    pub dummy_interval: Option<u32>,
    pub cq_mode: CqFailureMode,
    pub mutation: Mutation,
    /// Explore every initial acknowledgment in `[0, nmessages]`. Only
    /// meaningful for a single target; multi-target runs start from zero.
    pub explore_initial_acks: bool,
    /// Hard cap on distinct states before giving up.
    pub max_states: u64,
}

impl Default for ExplorerConfig {
    fn default() -> ExplorerConfig {
        ExplorerConfig {
            nmessages: 3,
            nfailures: 1,
            targets: 1,
            batch_size: 2,
            ack_batching: 1,
            dummy_interval: None,
            cq_mode: CqFailureMode::Flush,
            mutation: Mutation::None,
            explore_initial_acks: true,
            max_states: 50_000_000,
        }
    }
}

/// Documented hard limits; anything beyond these state spaces is refused.
pub const MAX_NMESSAGES: u32 = 6;
pub const MAX_NFAILURES: u32 = 3;
pub const MAX_EXPLORER_TARGETS: u16 = 2;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BoundsError {
    #[error("nmessages must be in 1..={MAX_NMESSAGES}")]
    Messages,
    #[error("nfailures must be at most {MAX_NFAILURES}")]
    Failures,
    #[error("explorer targets must be in 1..={MAX_EXPLORER_TARGETS}")]
    Targets,
}

impl ExplorerConfig {
    pub fn validate(&self) -> Result<(), BoundsError> {
        if self.nmessages == 0 || self.nmessages > MAX_NMESSAGES {
            return Err(BoundsError::Messages);
        }
        if self.nfailures > MAX_NFAILURES {
            return Err(BoundsError::Failures);
        }
        if self.targets == 0 || self.targets > MAX_EXPLORER_TARGETS {
            return Err(BoundsError::Targets);
        }
        Ok(())
    }

    fn system_config(&self) -> SystemConfig {
        SystemConfig {
            targets: self.targets,
            recovery: RecoveryConfig {
                dummy_interval: self.dummy_interval,
                max_batch_size: self.batch_size,
            },
            ack_batching: self.ack_batching,
            cq_mode: self.cq_mode,
            mutation: self.mutation,
        }
    }

    fn log(&self) -> SyntheticLog {
        SyntheticLog {
            nmessages: u64::from(self.nmessages),
            targets: self.targets,
        }
    }

    fn initial_ack_sets(&self) -> Vec<Vec<u64>> {
        if self.targets == 1 && self.explore_initial_acks {
            (0..=u64::from(self.nmessages)).map(|x| vec![x]).collect()
        } else {
            vec![vec![0; self.targets as usize]]
        }
    }
}

/// Search statistics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExploreStats {
    /// States expanded (popped and had successors generated).
    pub states_explored: u64,
    /// Distinct states discovered.
    pub distinct_states: u64,
    /// Transitions applied.
    pub transitions: u64,
    /// Terminal states (nothing enabled).
    pub terminal_states: u64,
    pub max_depth: u32,
}

/// A replayable violating execution: the initial condition, the exact step
/// sequence, the violation the final step produces, and a snapshot of the
/// state it happened in.
#[derive(Debug, Clone, PartialEq)]
pub struct Counterexample {
    pub initial_acks: Vec<u64>,
    pub steps: Vec<Step>,
    pub violation: Violation,
    pub final_state: String,
}

/// Terse one-line-per-target rendering of a system state.
fn summarize(state: &SystemState) -> String {
    let mut out = String::new();
    let _ = write!(
        out,
        "frontier ci={} main-next={} cq={} recoveries={}",
        state.current_index,
        state.main_next,
        state.cq.len(),
        state.recoveries.len()
    );
    for (t, q) in state.queues.iter().enumerate() {
        let _ = write!(
            out,
            "; t{t} q={} term={} normal={} catchup={} last-ack={} persisted={} alive={}",
            q.state().tag(),
            q.current_term(),
            q.normal_len(),
            q.catchup_len(),
            state.last_acks[t],
            state.targets[t].persisted_index,
            u8::from(state.targets[t].alive)
        );
    }
    out
}

impl Counterexample {
    /// Render in the replayable text format.
    pub fn to_text(&self, config: &ExplorerConfig) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "config nmessages={} nfailures={} targets={} batch-size={} ack-batching={} cq-mode={} mutant={}",
            config.nmessages,
            config.nfailures,
            config.targets,
            config.batch_size,
            config.ack_batching,
            config.cq_mode.name(),
            config.mutation,
        );
        let acks: Vec<String> = self.initial_acks.iter().map(|a| a.to_string()).collect();
        let _ = writeln!(out, "initial lastacks={}", acks.join(","));
        for s in &self.steps {
            let _ = writeln!(out, "step {s}");
        }
        let _ = writeln!(out, "violation {}", self.violation);
        let _ = writeln!(out, "state {}", self.final_state);
        out
    }

    /// Parse the text format back into a config and counterexample skeleton
    /// (the violation line is informational; replay recomputes it).
    pub fn parse(text: &str) -> Option<(ExplorerConfig, Counterexample)> {
        let mut config = ExplorerConfig::default();
        let mut initial_acks = Vec::new();
        let mut steps = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if let Some(rest) = line.strip_prefix("config ") {
                for kv in rest.split_whitespace() {
                    let (k, v) = kv.split_once('=')?;
                    match k {
                        "nmessages" => config.nmessages = v.parse().ok()?,
                        "nfailures" => config.nfailures = v.parse().ok()?,
                        "targets" => config.targets = v.parse().ok()?,
                        "batch-size" => config.batch_size = v.parse().ok()?,
                        "ack-batching" => config.ack_batching = v.parse().ok()?,
                        "cq-mode" => config.cq_mode = CqFailureMode::parse(v)?,
                        "mutant" => config.mutation = Mutation::parse(v)?,
                        _ => return None,
                    }
                }
            } else if let Some(rest) = line.strip_prefix("initial lastacks=") {
                initial_acks = rest
                    .split(',')
                    .map(|v| v.parse().ok())
                    .collect::<Option<Vec<u64>>>()?;
            } else if let Some(rest) = line.strip_prefix("step ") {
                steps.push(Step::parse(rest)?);
            }
        }
        if initial_acks.is_empty() {
            return None;
        }
        Some((
            config,
            Counterexample {
                initial_acks,
                steps,
                violation: Violation::Stuck { missing: vec![] },
                final_state: String::new(),
            },
        ))
    }
}

/// Outcome of one exploration.
#[derive(Debug, Clone, PartialEq)]
pub enum ExploreOutcome {
    /// Every interleaving is safe and every terminal state fully delivered.
    Pass(ExploreStats),
    /// A violating execution was found.
    Violation(Box<Counterexample>, ExploreStats),
    /// The state cap was hit before the search finished.
    StateLimit(ExploreStats),
}

impl ExploreOutcome {
    pub fn stats(&self) -> ExploreStats {
        match self {
            ExploreOutcome::Pass(s) => *s,
            ExploreOutcome::Violation(_, s) => *s,
            ExploreOutcome::StateLimit(s) => *s,
        }
    }

    pub fn counterexample(&self) -> Option<&Counterexample> {
        match self {
            ExploreOutcome::Violation(c, _) => Some(c),
            _ => None,
        }
    }
}

enum Parent {
    Root { initial_acks: Vec<u64> },
    Link { parent: u32, step: Step },
}

/// Apply `step` and verify the queue state-transition closure across it.
fn apply_checked(
    state: &mut SystemState,
    cfg: &SystemConfig,
    log: &SyntheticLog,
    step: Step,
    pre_states: &mut Vec<QueueState>,
) -> Result<(), Violation> {
    pre_states.clear();
    pre_states.extend(state.queues.iter().map(|q| q.state()));
    state.apply(cfg, log, step, &mut NullObserver)?;
    for (t, q) in state.queues.iter().enumerate() {
        let from = pre_states[t];
        let to = q.state();
        if from != to && !QueueState::transition_allowed(from, to) {
            return Err(Violation::IllegalTransition {
                target: t as TargetId,
                from,
                to,
            });
        }
    }
    Ok(())
}

/// Everything a terminal state owes: full delivery and fully propagated
/// acknowledgments.
fn terminal_violation(state: &SystemState, log: &SyntheticLog) -> Option<Violation> {
    let missing = state.missing_deliveries(log);
    if !missing.is_empty() {
        return Some(Violation::Stuck { missing });
    }
    for t in 0..state.targets.len() {
        if state.last_acks[t] != state.targets[t].persisted_index {
            return Some(Violation::AcksStranded {
                target: t as TargetId,
                persisted: state.targets[t].persisted_index,
                last_ack: state.last_acks[t],
            });
        }
    }
    None
}

fn enumerate(state: &SystemState, log: &SyntheticLog, budget: u32, out: &mut Vec<Step>) {
    out.clear();
    state.protocol_steps(log, out);
    state.health_steps(out);
    state.fault_steps(budget, out);
}

/// Breadth-first exploration of every interleaving within the bounds.
pub fn explore(config: &ExplorerConfig) -> Result<ExploreOutcome, BoundsError> {
    config.validate()?;
    let cfg = config.system_config();
    let log = config.log();

    let mut states: Vec<Arc<SystemState>> = Vec::new();
    let mut parents: Vec<Parent> = Vec::new();
    let mut depths: Vec<u32> = Vec::new();
    let mut seen: HashMap<Arc<SystemState>, u32> = HashMap::new();
    let mut queue: VecDeque<u32> = VecDeque::new();
    let mut stats = ExploreStats::default();

    for initial_acks in config.initial_ack_sets() {
        let state = Arc::new(SystemState::new(&cfg, &initial_acks));
        if seen.contains_key(&state) {
            continue;
        }
        let id = states.len() as u32;
        seen.insert(state.clone(), id);
        states.push(state);
        parents.push(Parent::Root { initial_acks });
        depths.push(0);
        queue.push_back(id);
        stats.distinct_states += 1;
    }

    let reconstruct = |id: u32,
                       extra: Option<Step>,
                       parents: &[Parent],
                       violation: Violation,
                       at_state: &SystemState| {
        let mut steps: Vec<Step> = extra.into_iter().collect();
        let mut cursor = id;
        let initial_acks = loop {
            match &parents[cursor as usize] {
                Parent::Root { initial_acks } => break initial_acks.clone(),
                Parent::Link { parent, step } => {
                    steps.push(*step);
                    cursor = *parent;
                }
            }
        };
        steps.reverse();
        Counterexample {
            initial_acks,
            steps,
            violation,
            final_state: summarize(at_state),
        }
    };

    let mut enabled: Vec<Step> = Vec::new();
    let mut pre_states: Vec<QueueState> = Vec::new();

    while let Some(id) = queue.pop_front() {
        let state = states[id as usize].clone();
        let depth = depths[id as usize];
        stats.states_explored += 1;

        enumerate(&state, &log, config.nfailures, &mut enabled);
        if enabled.is_empty() {
            stats.terminal_states += 1;
            if let Some(v) = terminal_violation(&state, &log) {
                let cex = reconstruct(id, None, &parents, v, &state);
                return Ok(ExploreOutcome::Violation(Box::new(cex), stats));
            }
            continue;
        }

        let enabled_here = enabled.clone();
        for step in enabled_here {
            stats.transitions += 1;
            let mut next = (*state).clone();
            if let Err(v) = apply_checked(&mut next, &cfg, &log, step, &mut pre_states) {
                let cex = reconstruct(id, Some(step), &parents, v, &next);
                return Ok(ExploreOutcome::Violation(Box::new(cex), stats));
            }
            let next = Arc::new(next);
            if seen.contains_key(&next) {
                continue;
            }
            if stats.distinct_states >= config.max_states {
                return Ok(ExploreOutcome::StateLimit(stats));
            }
            let next_id = states.len() as u32;
            seen.insert(next.clone(), next_id);
            states.push(next);
            parents.push(Parent::Link { parent: id, step });
            let d = depth + 1;
            depths.push(d);
            stats.max_depth = stats.max_depth.max(d);
            queue.push_back(next_id);
            stats.distinct_states += 1;
        }
    }

    Ok(ExploreOutcome::Pass(stats))
}

/// Replay error: the recorded steps do not reproduce a violation.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReplayError {
    #[error("step {at} ({step}) was not enabled during replay")]
    StepNotEnabled { at: usize, step: Step },
    #[error("a violation occurred before the final recorded step")]
    EarlyViolation { at: usize },
    #[error("replay completed without reproducing a violation")]
    NoViolation,
}

/// Re-execute a counterexample's step sequence from its initial condition.
/// Returns the violation it reproduces.
pub fn replay(config: &ExplorerConfig, cex: &Counterexample) -> Result<Violation, ReplayError> {
    let cfg = config.system_config();
    let log = config.log();
    let mut state = SystemState::new(&cfg, &cex.initial_acks);
    let mut enabled = Vec::new();
    let mut pre_states = Vec::new();
    for (at, &step) in cex.steps.iter().enumerate() {
        enumerate(&state, &log, config.nfailures, &mut enabled);
        if !enabled.contains(&step) {
            return Err(ReplayError::StepNotEnabled { at, step });
        }
        if let Err(v) = apply_checked(&mut state, &cfg, &log, step, &mut pre_states) {
            if at + 1 == cex.steps.len() {
                return Ok(v);
            }
            return Err(ReplayError::EarlyViolation { at });
        }
    }
    // a stuck counterexample violates at its terminal state, not on a step
    enumerate(&state, &log, config.nfailures, &mut enabled);
    if enabled.is_empty() {
        if let Some(v) = terminal_violation(&state, &log) {
            return Ok(v);
        }
    }
    Err(ReplayError::NoViolation)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(nmessages: u32, nfailures: u32) -> ExplorerConfig {
        ExplorerConfig {
            nmessages,
            nfailures,
            ..ExplorerConfig::default()
        }
    }

    #[test]
    fn trivial_bound_passes() {
        let outcome = explore(&cfg(1, 0)).unwrap();
        match outcome {
            ExploreOutcome::Pass(stats) => {
                assert!(stats.distinct_states >= 1);
                assert!(stats.terminal_states >= 1);
            }
            other => panic!("expected pass, got {other:?}"),
        }
    }

    #[test]
    fn single_failure_passes_clean() {
        let outcome = explore(&cfg(2, 1)).unwrap();
        assert!(matches!(outcome, ExploreOutcome::Pass(_)), "{outcome:?}");
    }

    #[test]
    fn bounds_are_enforced() {
        assert_eq!(explore(&cfg(0, 0)).unwrap_err(), BoundsError::Messages);
        assert_eq!(explore(&cfg(9, 0)).unwrap_err(), BoundsError::Messages);
        assert_eq!(explore(&cfg(2, 9)).unwrap_err(), BoundsError::Failures);
        let mut c = cfg(2, 0);
        c.targets = 5;
        assert_eq!(explore(&c).unwrap_err(), BoundsError::Targets);
    }

    #[test]
    fn no_term_mutant_duplicates_with_two_failures() {
        let mut c = cfg(2, 2);
        c.mutation = Mutation::NoTerm;
        let outcome = explore(&c).unwrap();
        let cex = outcome.counterexample().expect("must find a duplicate");
        assert!(matches!(cex.violation, Violation::DeliveryOrder { .. }));
        let replayed = replay(&c, cex).unwrap();
        assert_eq!(replayed, cex.violation);
    }

    #[test]
    fn no_fc_transition_mutant_wedges_with_one_failure() {
        let mut c = cfg(3, 1);
        c.mutation = Mutation::NoFcTransition;
        let outcome = explore(&c).unwrap();
        let cex = outcome.counterexample().expect("must find a stuck state");
        assert!(matches!(cex.violation, Violation::Stuck { .. }));
        let replayed = replay(&c, cex).unwrap();
        assert_eq!(replayed, cex.violation);
    }

    #[test]
    fn counterexample_text_round_trips() {
        let mut c = cfg(2, 2);
        c.mutation = Mutation::NoTerm;
        let outcome = explore(&c).unwrap();
        let cex = outcome.counterexample().unwrap().clone();
        let text = cex.to_text(&c);
        let (parsed_cfg, parsed_cex) = Counterexample::parse(&text).unwrap();
        assert_eq!(parsed_cfg.nmessages, c.nmessages);
        assert_eq!(parsed_cfg.mutation, c.mutation);
        assert_eq!(parsed_cex.steps, cex.steps);
        assert_eq!(parsed_cex.initial_acks, cex.initial_acks);
        let replayed = replay(&parsed_cfg, &parsed_cex).unwrap();
        assert_eq!(replayed, cex.violation);
    }

    #[test]
    fn exploration_is_deterministic() {
        let mut c = cfg(2, 1);
        c.cq_mode = CqFailureMode::FailTags;
        let a = explore(&c).unwrap();
        let b = explore(&c).unwrap();
        assert_eq!(a.stats(), b.stats());
    }
}
