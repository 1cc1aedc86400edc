//! Command-line driver: run scenarios, explore interleavings, fuzz, and
//! benchmark.
//!
//! Exit status: 0 when the command's verdict passes, 1 on a verification
//! failure or counterexample, 2 on usage or parse errors.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use walrelay_core::explorer::{self, ExplorerConfig, ExploreOutcome};
use walrelay_core::fuzz::{fuzz, FuzzConfig};
use walrelay_core::live::{run_bench, BenchConfig};
use walrelay_core::queue::Mutation;
use walrelay_core::scenario::Scenario;
use walrelay_core::sim::run_scenario;
use walrelay_core::transport::CqFailureMode;

#[derive(Parser)]
#[command(
    name = "walrelay",
    about = "Exactly-once in-order log delivery engine: simulator, interleaving explorer, fuzzer, and latency bench"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file under the deterministic simulator.
    Run(RunArgs),
    /// Exhaustively explore interleavings within small bounds.
    Explore(ExploreArgs),
    /// Run randomized scenarios and report any replayable failure seed.
    Fuzz(FuzzArgs),
    /// Measure delivery latency on the real threaded configuration.
    Bench(BenchArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file to execute.
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the run trace here.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write per-entry metric records here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the scenario's protocol mutation.
    #[arg(long)]
    mutant: Option<String>,
}

#[derive(Args)]
struct ExploreArgs {
    #[arg(long, default_value_t = 3)]
    nmessages: u32,
    #[arg(long, default_value_t = 1)]
    nfailures: u32,
    #[arg(long, default_value_t = 1)]
    targets: u16,
    #[arg(long, default_value_t = 2)]
    batch_size: u32,
    #[arg(long, default_value_t = 1)]
    ack_batching: u32,
    /// Dummy-entry interval (omit to disable dummies).
    #[arg(long)]
    dummy_interval: Option<u32>,
    /// Completion-queue teardown mode: flush, fail, or both.
    #[arg(long, default_value = "both")]
    cq_mode: String,
    /// Protocol mutation to check (no-term, no-fc-transition).
    #[arg(long)]
    mutant: Option<String>,
    /// Where to write a counterexample, if one is found.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replay a previously written counterexample file instead of searching.
    #[arg(long)]
    replay: Option<PathBuf>,
}

#[derive(Args)]
struct FuzzArgs {
    #[arg(long, default_value_t = 10_000)]
    iterations: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    max_entries: u32,
    #[arg(long, default_value_t = 4)]
    max_targets: u16,
    #[arg(long, default_value_t = 3)]
    max_faults: u32,
    #[arg(long)]
    mutant: Option<String>,
    /// Write the first failing scenario and trace here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 4)]
    targets: u16,
    #[arg(long, default_value_t = 1)]
    payload_kb: u32,
    #[arg(long, default_value_t = 10_000)]
    entries: u32,
    #[arg(long, default_value_t = 8)]
    batch_size: u32,
    #[arg(long, default_value_t = 1)]
    ack_batching: u32,
    #[arg(long, default_value_t = 10)]
    dummy_interval: u32,
    /// Injected commit latency per append, in microseconds.
    #[arg(long, default_value_t = 0)]
    append_latency_us: u64,
    /// Write per-entry metric records here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_mutation(name: &Option<String>) -> anyhow::Result<Mutation> {
    match name {
        None => Ok(Mutation::None),
        Some(n) => Mutation::parse(n)
            .ok_or_else(|| anyhow!("unknown mutant `{n}` (expected no-term or no-fc-transition)")),
    }
}

fn cmd_run(args: &RunArgs) -> anyhow::Result<ExitCode> {
    let text = fs::read_to_string(&args.scenario)
        .with_context(|| format!("reading {}", args.scenario.display()))?;
    let mut scenario = match Scenario::parse(&text) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("scenario error: {e}");
            return Ok(ExitCode::from(2));
        }
    };
    if args.mutant.is_some() {
        scenario.mutation = parse_mutation(&args.mutant)?;
    }

    let report = run_scenario(&scenario, args.seed);
    if let Some(path) = &args.trace {
        fs::write(path, &report.trace).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &args.out {
        let mut buf = Vec::new();
        report.metrics.write_records(&mut buf)?;
        fs::write(path, buf).with_context(|| format!("writing {}", path.display()))?;
    }

    println!(
        "scenario: {} entries, {} targets, {} fault(s), seed {}",
        scenario.entries,
        scenario.targets,
        scenario.faults.len(),
        args.seed
    );
    println!(
        "run: {} ticks, {} appended, {} dummies, drops suspended={} stale-term={}",
        report.stats.ticks,
        report.stats.appended,
        report.stats.dummies_emitted,
        report.stats.drops_suspended,
        report.stats.drops_stale_term
    );
    for r in &report.stats.recoveries {
        println!(
            "recovery: target {} replayed [{}, {}] under term {}",
            r.target, r.start, r.end, r.term
        );
    }
    for s in &report.stats.restart_starts {
        println!("engine restart: main stream resumed at index {s}");
    }
    print!("{}", report.metrics.summary_table());
    match report.outcome {
        Ok(()) => {
            println!("verdict: pass");
            Ok(ExitCode::SUCCESS)
        }
        Err(f) => {
            println!("verdict: FAIL at tick {}: {}", f.at_tick, f.reason);
            println!("reproduce with: walrelay run --scenario {} --seed {}", args.scenario.display(), f.seed);
            Ok(ExitCode::FAILURE)
        }
    }
}

fn explorer_config(args: &ExploreArgs, cq_mode: CqFailureMode) -> anyhow::Result<ExplorerConfig> {
    Ok(ExplorerConfig {
        nmessages: args.nmessages,
        nfailures: args.nfailures,
        targets: args.targets,
        batch_size: args.batch_size,
        ack_batching: args.ack_batching,
        dummy_interval: args.dummy_interval,
        cq_mode,
        mutation: parse_mutation(&args.mutant)?,
        explore_initial_acks: true,
        ..ExplorerConfig::default()
    })
}

fn cmd_explore(args: &ExploreArgs) -> anyhow::Result<ExitCode> {
    if let Some(path) = &args.replay {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let (config, cex) = explorer::Counterexample::parse(&text)
            .ok_or_else(|| anyhow!("{} is not a counterexample file", path.display()))?;
        return match explorer::replay(&config, &cex) {
            Ok(violation) => {
                println!("replayed {} steps; violation reproduced: {violation}", cex.steps.len());
                Ok(ExitCode::SUCCESS)
            }
            Err(e) => {
                println!("replay failed: {e}");
                Ok(ExitCode::FAILURE)
            }
        };
    }

    let modes: Vec<CqFailureMode> = match args.cq_mode.as_str() {
        "both" => vec![CqFailureMode::Flush, CqFailureMode::FailTags],
        other => vec![CqFailureMode::parse(other)
            .ok_or_else(|| anyhow!("unknown cq-mode `{other}` (expected flush, fail, or both)"))?],
    };

    for mode in modes {
        let config = explorer_config(args, mode)?;
        let started = Instant::now();
        let outcome = match explorer::explore(&config) {
            Ok(o) => o,
            Err(bounds) => {
                eprintln!("refusing to explore: {bounds}");
                return Ok(ExitCode::from(2));
            }
        };
        let stats = outcome.stats();
        println!(
            "explore nmessages={} nfailures={} targets={} cq-mode={}: {} states ({} distinct), {} transitions, depth {}, {} terminal states in {:.2?}",
            args.nmessages,
            args.nfailures,
            args.targets,
            mode.name(),
            stats.states_explored,
            stats.distinct_states,
            stats.transitions,
            stats.max_depth,
            stats.terminal_states,
            started.elapsed()
        );
        match outcome {
            ExploreOutcome::Pass(_) => println!("verdict: pass (no safety or delivery violation)"),
            ExploreOutcome::StateLimit(_) => {
                println!("verdict: inconclusive (state cap reached)");
                return Ok(ExitCode::FAILURE);
            }
            ExploreOutcome::Violation(cex, _) => {
                println!("verdict: VIOLATION — {}", cex.violation);
                println!("counterexample: {} steps from initial acks {:?}", cex.steps.len(), cex.initial_acks);
                let path = args
                    .out
                    .clone()
                    .unwrap_or_else(|| PathBuf::from("walrelay-counterexample.txt"));
                fs::write(&path, cex.to_text(&config))
                    .with_context(|| format!("writing {}", path.display()))?;
                println!("written to {} (replay with --replay)", path.display());
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_fuzz(args: &FuzzArgs) -> anyhow::Result<ExitCode> {
    let config = FuzzConfig {
        iterations: args.iterations,
        seed: args.seed,
        max_entries: args.max_entries,
        max_targets: args.max_targets,
        max_faults: args.max_faults,
        mutation: parse_mutation(&args.mutant)?,
        ..FuzzConfig::default()
    };
    let started = Instant::now();
    let report = fuzz(&config, |done, failures| {
        if done > 0 && done % 2_000 == 0 {
            eprintln!("... {done} iterations, {failures} failure(s)");
        }
    });
    println!(
        "fuzz: {} iterations in {:.2?}, {} failure(s)",
        report.iterations,
        started.elapsed(),
        report.failures
    );
    match report.first_failure {
        None => Ok(ExitCode::SUCCESS),
        Some(f) => {
            println!("first failure: iteration {} seed {} — {}", f.iteration, f.seed, f.reason);
            println!("reproduce with: walrelay fuzz --iterations 1 --seed <seed> (seed derives the scenario)");
            println!("failing scenario:\n{}", f.scenario_text.trim_end());
            if let Some(path) = &args.out {
                let mut blob = String::new();
                blob.push_str(&format!("# fuzz failure: seed {} iteration {}\n", f.seed, f.iteration));
                blob.push_str(&format!("# reason: {}\n", f.reason));
                blob.push_str(&f.scenario_text);
                blob.push_str("\n# trace:\n");
                blob.push_str(&f.trace);
                fs::write(path, blob).with_context(|| format!("writing {}", path.display()))?;
                println!("scenario and trace written to {}", path.display());
            }
            Ok(ExitCode::FAILURE)
        }
    }
}

fn cmd_bench(args: &BenchArgs) -> anyhow::Result<ExitCode> {
    let config = BenchConfig {
        targets: args.targets,
        entries: args.entries,
        payload_kb: args.payload_kb,
        batch_size: args.batch_size,
        ack_batching: args.ack_batching,
        dummy_interval: (args.dummy_interval > 0).then_some(args.dummy_interval),
        append_latency: Duration::from_micros(args.append_latency_us),
    };
    println!(
        "bench: {} entries x {} KB over {} targets (batch {}, ack every {})",
        args.entries, args.payload_kb, args.targets, args.batch_size, args.ack_batching
    );
    let report = run_bench(&config).map_err(|e| anyhow!("bench run failed: {e}"))?;
    report
        .metrics
        .validate_ordering()
        .map_err(|e| anyhow!("timestamp ordering violated: {e}"))?;
    println!(
        "delivered {} (entry, target) pairs in {:.2?}",
        report.metrics.records.len(),
        report.elapsed
    );
    print!("{}", report.metrics.summary_table());
    if let Some(path) = &args.out {
        let mut buf = Vec::new();
        report.metrics.write_records(&mut buf)?;
        fs::write(path, buf).with_context(|| format!("writing {}", path.display()))?;
        println!("records written to {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Explore(args) => cmd_explore(args),
        Command::Fuzz(args) => cmd_fuzz(args),
        Command::Bench(args) => cmd_bench(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
