//! Randomized scenario fuzzing over the deterministic simulator.
//!
//! Each iteration derives a sub-seed, generates a random scenario from it
//! (workload size, membership, batch and ack knobs, dummy interval, and a
//! fault script of crash/recovery cycles and engine restarts), and runs it.
//! Because generation and execution both consume only the sub-seed, any
//! failure is reproducible from that one number.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::queue::{Mutation, TargetId};
use crate::scenario::{FaultEvent, FaultKind, FaultTime, Membership, Scenario};
use crate::sim::{derive_seed, run_scenario, FailReason, RunReport};
use crate::transport::CqFailureMode;

/// Fuzzing bounds. Defaults match the standing verification run.
#[derive(Debug, Clone)]
pub struct FuzzConfig {
    pub iterations: u64,
    pub seed: u64,
    pub max_entries: u32,
    pub max_targets: u16,
    /// Fault budget per scenario; a crash/recovery cycle or an engine
    /// restart each cost one.
    pub max_faults: u32,
    pub batch_choices: Vec<u32>,
    pub ack_choices: Vec<u32>,
    pub dummy_choices: Vec<u32>,
    pub mutation: Mutation,
}

impl Default for FuzzConfig {
    fn default() -> FuzzConfig {
        FuzzConfig {
            iterations: 10_000,
            seed: 0,
            max_entries: 50,
            max_targets: 4,
            max_faults: 3,
            batch_choices: vec![1, 4, 16],
            ack_choices: vec![1, 4],
            dummy_choices: vec![1, 5, 10],
            mutation: Mutation::None,
        }
    }
}

/// One reproducible failing iteration.
#[derive(Debug, Clone)]
pub struct FuzzFailure {
    pub iteration: u64,
    pub seed: u64,
    pub reason: FailReason,
    pub scenario_text: String,
    pub trace: String,
}

#[derive(Debug, Clone, Default)]
pub struct FuzzReport {
    pub iterations: u64,
    pub failures: u64,
    /// First failure in full detail; later ones only bump the counter.
    pub first_failure: Option<FuzzFailure>,
}

impl FuzzReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Generate the scenario for one fuzz seed. Deterministic in `seed`.
pub fn generate_scenario(config: &FuzzConfig, seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let targets = rng.gen_range(1..=config.max_targets);
    let entries = rng.gen_range(1..=config.max_entries);
    let batch_size = *config.batch_choices.choose(&mut rng).unwrap_or(&4);
    let ack_batching = *config.ack_choices.choose(&mut rng).unwrap_or(&1);
    let dummy_interval = Some(*config.dummy_choices.choose(&mut rng).unwrap_or(&10));
    let membership = if rng.gen_bool(0.5) {
        Membership::All
    } else {
        Membership::Random
    };
    // occasionally park one target outside every membership set
    let idle_targets = if targets >= 2 && rng.gen_bool(0.25) {
        vec![rng.gen_range(0..targets)]
    } else {
        Vec::new()
    };
    let cq_mode = if rng.gen_bool(0.5) {
        CqFailureMode::Flush
    } else {
        CqFailureMode::FailTags
    };

    // fault script: random walk over {crash, recover, engine restart}
    // within the budget, closing every crash with a recovery
    let mut faults: Vec<FaultEvent> = Vec::new();
    let mut down: Vec<bool> = vec![false; targets as usize];
    let mut budget = rng.gen_range(0..=config.max_faults);
    loop {
        let n_down = down.iter().filter(|&&d| d).count();
        let mut moves: Vec<u8> = Vec::new();
        if budget > 0 {
            moves.push(0); // crash someone
            if n_down == 0 {
                moves.push(2); // engine restart
            }
        }
        if n_down > 0 {
            moves.push(1); // recover someone
        }
        if moves.is_empty() {
            break;
        }
        match *moves.choose(&mut rng).unwrap() {
            0 => {
                let ups: Vec<TargetId> = (0..targets).filter(|&t| !down[t as usize]).collect();
                if let Some(&t) = ups.as_slice().choose(&mut rng) {
                    faults.push(FaultEvent {
                        at: FaultTime::Nondet,
                        kind: FaultKind::Down(t),
                    });
                    down[t as usize] = true;
                    budget -= 1;
                } else {
                    budget = 0;
                }
            }
            1 => {
                let downs: Vec<TargetId> = (0..targets).filter(|&t| down[t as usize]).collect();
                let &t = downs.as_slice().choose(&mut rng).unwrap();
                faults.push(FaultEvent {
                    at: FaultTime::Nondet,
                    kind: FaultKind::Up(t),
                });
                down[t as usize] = false;
            }
            _ => {
                faults.push(FaultEvent {
                    at: FaultTime::Nondet,
                    kind: FaultKind::ReplayerRestart,
                });
                budget -= 1;
            }
        }
    }

    Scenario {
        entries,
        targets,
        batch_size,
        ack_batching,
        dummy_interval,
        payload_bytes: rng.gen_range(0..=64),
        membership,
        idle_targets,
        append_interval: (1, rng.gen_range(2..=8)),
        faults,
        cq_mode,
        mutation: config.mutation,
    }
}

/// Run the single iteration a seed names.
pub fn fuzz_one(config: &FuzzConfig, seed: u64) -> (Scenario, RunReport) {
    let scenario = generate_scenario(config, seed);
    debug_assert!(scenario.validate().is_ok());
    let report = run_scenario(&scenario, seed);
    (scenario, report)
}

/// Run the whole campaign. `progress` is called every few hundred
/// iterations with (done, failures).
pub fn fuzz<F: FnMut(u64, u64)>(config: &FuzzConfig, mut progress: F) -> FuzzReport {
    let mut report = FuzzReport::default();
    for i in 0..config.iterations {
        let seed = derive_seed(config.seed, i);
        let (scenario, run) = fuzz_one(config, seed);
        report.iterations += 1;
        if let Err(failure) = run.outcome {
            report.failures += 1;
            if report.first_failure.is_none() {
                report.first_failure = Some(FuzzFailure {
                    iteration: i,
                    seed,
                    reason: failure.reason,
                    scenario_text: scenario.to_text(),
                    trace: run.trace.clone(),
                });
            }
        }
        if i % 500 == 0 {
            progress(i, report.failures);
        }
    }
    progress(report.iterations, report.failures);
    report
}
