//! Scenario files: a human-readable description of one simulated run.
//!
//! A scenario pins the workload (entry count, targets, payload, membership),
//! the engine knobs (batch size, ack batching, dummy interval), and a fault
//! schedule. Fault events fire in file order; an event either names the
//! scheduler step it fires at (steps must be non-decreasing through the
//! file) or says `nondet`, in which case the runner draws the step from the
//! seeded RNG. Together with the seed, a scenario fully determines the run.
//!
//! ```text
//! # one target crashes mid-stream and recovers
//! entries 40
//! targets 3
//! batch-size 4
//! fault 120 down 1
//! fault nondet up 1
//! ```

use std::fmt::Write as _;

use rand::Rng;

use crate::queue::{Mutation, TargetId};
use crate::transport::CqFailureMode;

/// How entry membership is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Membership {
    /// Every entry addresses every non-idle target.
    All,
    /// Every entry addresses a random nonempty subset of non-idle targets.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultKind {
    Down(TargetId),
    Up(TargetId),
    ReplayerRestart,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultTime {
    Step(u64),
    Nondet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FaultEvent {
    pub at: FaultTime,
    pub kind: FaultKind,
}

/// A full run description. See the module docs for the file format.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub entries: u32,
    pub targets: u16,
    pub batch_size: u32,
    pub ack_batching: u32,
    pub dummy_interval: Option<u32>,
    pub payload_bytes: u32,
    pub membership: Membership,
    /// Targets excluded from every entry's membership (reachable only via
    /// dummies).
    pub idle_targets: Vec<TargetId>,
    /// Scheduler ticks between appends, drawn uniformly from this inclusive
    /// range (the injected append latency).
    pub append_interval: (u32, u32),
    pub faults: Vec<FaultEvent>,
    pub cq_mode: CqFailureMode,
    pub mutation: Mutation,
}

impl Default for Scenario {
    fn default() -> Scenario {
        Scenario {
            entries: 20,
            targets: 2,
            batch_size: 4,
            ack_batching: 1,
            dummy_interval: Some(10),
            payload_bytes: 16,
            membership: Membership::All,
            idle_targets: Vec::new(),
            append_interval: (1, 4),
            faults: Vec::new(),
            cq_mode: CqFailureMode::Flush,
            mutation: Mutation::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScenarioError {
    #[error("line {line}: unknown directive `{directive}`")]
    UnknownDirective { line: usize, directive: String },
    #[error("line {line}: field `{field}`: {problem}")]
    BadField {
        line: usize,
        field: String,
        problem: String,
    },
    #[error("{0}")]
    Invalid(String),
}

impl Scenario {
    /// Parse the line-oriented scenario format. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        let mut sc = Scenario::default();
        sc.faults.clear();
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let mut parts = content.split_whitespace();
            let directive = parts.next().unwrap();
            let args: Vec<&str> = parts.collect();
            let bad = |field: &str, problem: &str| ScenarioError::BadField {
                line,
                field: field.to_string(),
                problem: problem.to_string(),
            };
            let one_num = |field: &str| -> Result<u64, ScenarioError> {
                args.first()
                    .ok_or_else(|| bad(field, "missing value"))?
                    .parse()
                    .map_err(|_| bad(field, "expected a number"))
            };
            match directive {
                "entries" => sc.entries = one_num("entries")? as u32,
                "targets" => sc.targets = one_num("targets")? as u16,
                "batch-size" => sc.batch_size = one_num("batch-size")? as u32,
                "ack-batching" => sc.ack_batching = one_num("ack-batching")? as u32,
                "payload-bytes" => sc.payload_bytes = one_num("payload-bytes")? as u32,
                "dummy-interval" => {
                    sc.dummy_interval = match args.first() {
                        Some(&"off") => None,
                        Some(v) => Some(
                            v.parse()
                                .map_err(|_| bad("dummy-interval", "expected a number or `off`"))?,
                        ),
                        None => return Err(bad("dummy-interval", "missing value")),
                    }
                }
                "membership" => {
                    sc.membership = match args.first() {
                        Some(&"all") => Membership::All,
                        Some(&"random") => Membership::Random,
                        _ => return Err(bad("membership", "expected `all` or `random`")),
                    }
                }
                "idle" => {
                    let list = args
                        .first()
                        .ok_or_else(|| bad("idle", "missing target list"))?;
                    sc.idle_targets = list
                        .split(',')
                        .map(|v| v.parse::<TargetId>())
                        .collect::<Result<_, _>>()
                        .map_err(|_| bad("idle", "expected comma-separated target ids"))?;
                }
                "append-interval" => {
                    if args.len() != 2 {
                        return Err(bad("append-interval", "expected `min max`"));
                    }
                    let lo = args[0]
                        .parse()
                        .map_err(|_| bad("append-interval", "expected a number"))?;
                    let hi = args[1]
                        .parse()
                        .map_err(|_| bad("append-interval", "expected a number"))?;
                    sc.append_interval = (lo, hi);
                }
                "cq-mode" => {
                    sc.cq_mode = args
                        .first()
                        .and_then(|v| CqFailureMode::parse(v))
                        .ok_or_else(|| bad("cq-mode", "expected `flush` or `fail`"))?;
                }
                "mutant" => {
                    sc.mutation = args
                        .first()
                        .and_then(|v| Mutation::parse(v))
                        .ok_or_else(|| bad("mutant", "unknown mutation name"))?;
                }
                "fault" => {
                    if args.len() < 2 {
                        return Err(bad("fault", "expected `<step|nondet> <kind> [target]`"));
                    }
                    let at = if args[0] == "nondet" {
                        FaultTime::Nondet
                    } else {
                        FaultTime::Step(
                            args[0]
                                .parse()
                                .map_err(|_| bad("fault", "step must be a number or `nondet`"))?,
                        )
                    };
                    let target = |i: usize| -> Result<TargetId, ScenarioError> {
                        args.get(i)
                            .ok_or_else(|| bad("fault", "missing target id"))?
                            .parse()
                            .map_err(|_| bad("fault", "target must be a number"))
                    };
                    let kind = match args[1] {
                        "down" => FaultKind::Down(target(2)?),
                        "up" => FaultKind::Up(target(2)?),
                        "restart" => FaultKind::ReplayerRestart,
                        other => {
                            return Err(bad(
                                "fault",
                                &format!("unknown fault kind `{other}`"),
                            ))
                        }
                    };
                    sc.faults.push(FaultEvent { at, kind });
                }
                other => {
                    return Err(ScenarioError::UnknownDirective {
                        line,
                        directive: other.to_string(),
                    })
                }
            }
        }
        sc.validate()?;
        Ok(sc)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "entries {}", self.entries);
        let _ = writeln!(out, "targets {}", self.targets);
        let _ = writeln!(out, "batch-size {}", self.batch_size);
        let _ = writeln!(out, "ack-batching {}", self.ack_batching);
        match self.dummy_interval {
            Some(e) => {
                let _ = writeln!(out, "dummy-interval {e}");
            }
            None => {
                let _ = writeln!(out, "dummy-interval off");
            }
        }
        let _ = writeln!(out, "payload-bytes {}", self.payload_bytes);
        let _ = writeln!(
            out,
            "membership {}",
            match self.membership {
                Membership::All => "all",
                Membership::Random => "random",
            }
        );
        if !self.idle_targets.is_empty() {
            let ids: Vec<String> = self.idle_targets.iter().map(|t| t.to_string()).collect();
            let _ = writeln!(out, "idle {}", ids.join(","));
        }
        let _ = writeln!(
            out,
            "append-interval {} {}",
            self.append_interval.0, self.append_interval.1
        );
        let _ = writeln!(out, "cq-mode {}", self.cq_mode.name());
        if self.mutation != Mutation::None {
            let _ = writeln!(out, "mutant {}", self.mutation);
        }
        for f in &self.faults {
            let at = match f.at {
                FaultTime::Step(s) => s.to_string(),
                FaultTime::Nondet => "nondet".to_string(),
            };
            match f.kind {
                FaultKind::Down(t) => {
                    let _ = writeln!(out, "fault {at} down {t}");
                }
                FaultKind::Up(t) => {
                    let _ = writeln!(out, "fault {at} up {t}");
                }
                FaultKind::ReplayerRestart => {
                    let _ = writeln!(out, "fault {at} restart");
                }
            }
        }
        out
    }

    /// Structural validity: sane bounds, per-target down/up alternation with
    /// every down eventually recovered, and non-decreasing explicit steps.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let fail = |msg: String| Err(ScenarioError::Invalid(msg));
        if self.entries == 0 {
            return fail("entries must be at least 1".into());
        }
        if self.targets == 0 || self.targets > 20 {
            return fail("targets must be in 1..=20".into());
        }
        if self.batch_size == 0 || self.ack_batching == 0 {
            return fail("batch-size and ack-batching must be at least 1".into());
        }
        if self.dummy_interval == Some(0) {
            return fail("dummy-interval must be at least 1 (or `off`)".into());
        }
        if self.append_interval.0 > self.append_interval.1 || self.append_interval.1 == 0 {
            return fail("append-interval must be a nonempty range with max >= 1".into());
        }
        for &t in &self.idle_targets {
            if t >= self.targets {
                return fail(format!("idle target {t} out of range"));
            }
        }
        if self.idle_targets.len() >= self.targets as usize {
            return fail("at least one target must receive entries".into());
        }
        let mut down = vec![false; self.targets as usize];
        let mut last_step = 0u64;
        for f in &self.faults {
            if let FaultTime::Step(s) = f.at {
                if s < last_step {
                    return fail(format!(
                        "fault steps must be non-decreasing in file order (saw {s} after {last_step})"
                    ));
                }
                last_step = s;
            }
            match f.kind {
                FaultKind::Down(t) => {
                    if t >= self.targets {
                        return fail(format!("fault targets {t} out of range"));
                    }
                    if down[t as usize] {
                        return fail(format!("target {t} goes down twice without recovering"));
                    }
                    down[t as usize] = true;
                }
                FaultKind::Up(t) => {
                    if t >= self.targets {
                        return fail(format!("fault targets {t} out of range"));
                    }
                    if !down[t as usize] {
                        return fail(format!("target {t} comes up without going down"));
                    }
                    down[t as usize] = false;
                }
                FaultKind::ReplayerRestart => {}
            }
        }
        if let Some(t) = down.iter().position(|&d| d) {
            return fail(format!("target {t} never recovers; every down needs an up"));
        }
        Ok(())
    }

    /// Resolve `nondet` fault times into concrete steps. Events keep file
    /// order; each nondeterministic event fires a random delay after the
    /// previous one.
    pub fn resolve_faults<R: Rng>(&self, rng: &mut R, spread: u64) -> Vec<(u64, FaultKind)> {
        let mut resolved = Vec::with_capacity(self.faults.len());
        let mut prev = 0u64;
        for f in &self.faults {
            let step = match f.at {
                FaultTime::Step(s) => s.max(prev),
                FaultTime::Nondet => prev + rng.gen_range(1..=spread.max(1)),
            };
            prev = step;
            resolved.push((step, f.kind));
        }
        resolved
    }
}
