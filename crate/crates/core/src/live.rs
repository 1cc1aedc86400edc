//! The real concurrent configuration: actual threads, channels, and the
//! documented lock regions, used to measure delivery latency at wall-clock
//! speed. Correctness of the protocol logic is certified by the simulator
//! and the explorer; this engine exists so the latency numbers mean
//! something.
//!
//! Thread layout: one appender (the workload source), one main-stream
//! fetcher, one completion-queue consumer, one health checker, and one
//! thread per target playing the storage shard. Lock order, outermost
//! first: dispatch region → per-target send region → queue region → popped
//! region; the per-target read region is only ever held alone.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use crate::log::LogService;
use crate::metrics::{EntryRecord, Metrics};
use crate::queue::{Batch, Message, Mutation, PoppedBatches, QueueState, TargetId, TargetQueue};
use crate::recovery::needs_dummy;
use crate::transport::Ack;

/// Latency-run parameters. Payload is `payload_kb` one-kilobyte units
/// spread round-robin across targets; with fewer units than targets the
/// remaining targets idle and are kept current by dummies.
#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub targets: u16,
    pub entries: u32,
    pub payload_kb: u32,
    pub batch_size: u32,
    pub ack_batching: u32,
    pub dummy_interval: Option<u32>,
    /// Injected pause per append, modeling upstream commit latency.
    pub append_latency: Duration,
}

impl Default for BenchConfig {
    fn default() -> BenchConfig {
        BenchConfig {
            targets: 4,
            entries: 10_000,
            payload_kb: 1,
            batch_size: 8,
            ack_batching: 1,
            dummy_interval: Some(10),
            append_latency: Duration::ZERO,
        }
    }
}

#[derive(Debug)]
pub struct BenchReport {
    pub metrics: Metrics,
    pub elapsed: Duration,
}

enum StreamMsg {
    Batch(Batch),
    Close,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LiveTag {
    Write(TargetId),
    Read(TargetId),
    Shutdown,
}

/// Send side of one stream: the write-readiness gate and the wire.
struct SendSide {
    write_ready: bool,
    tx: Sender<StreamMsg>,
}

/// Read side of one stream: the read-readiness gate, the armed-read flag,
/// queued acknowledgments, and the response slot.
#[derive(Default)]
struct ReadSide {
    read_ready: bool,
    armed: bool,
    queued: std::collections::VecDeque<Ack>,
    response: Option<Ack>,
}

struct LiveStream {
    send: Mutex<SendSide>,
    read: Mutex<ReadSide>,
    cq: Sender<LiveTag>,
}

impl LiveStream {
    /// Target side pushing an acknowledgment: completes the armed read or
    /// parks the ack until one is armed.
    fn deliver_ack(&self, id: TargetId, ack: Ack) {
        let mut read = self.read.lock().unwrap();
        if read.armed {
            read.response = Some(ack);
            read.armed = false;
            drop(read);
            let _ = self.cq.send(LiveTag::Read(id));
        } else {
            read.queued.push_back(ack);
        }
    }
}

/// Blocking log wrapper: fetchers wait on the condvar for indexes that have
/// not been appended yet.
struct LiveLog {
    inner: Mutex<LogService>,
    grown: Condvar,
}

impl LiveLog {
    fn new() -> LiveLog {
        LiveLog {
            inner: Mutex::new(LogService::new()),
            grown: Condvar::new(),
        }
    }

    fn append(
        &self,
        targets: BTreeSet<TargetId>,
        payloads: Vec<Arc<[u8]>>,
        now_ns: u64,
    ) -> u64 {
        let mut log = self.inner.lock().unwrap();
        let idx = log.append(targets, payloads, now_ns);
        self.grown.notify_all();
        idx
    }

    fn read_blocking(&self, index: u64, stop: &AtomicBool) -> Option<Arc<crate::log::LogEntry>> {
        let mut log = self.inner.lock().unwrap();
        loop {
            if let Some(e) = log.read(index) {
                return Some(e);
            }
            if stop.load(Ordering::Acquire) {
                return None;
            }
            let (guard, _timeout) = self
                .grown
                .wait_timeout(log, Duration::from_millis(10))
                .unwrap();
            log = guard;
        }
    }
}

struct Engine {
    cfg: BenchConfig,
    epoch: Instant,
    log: LiveLog,
    queues: Vec<Mutex<TargetQueue>>,
    popped: Vec<Mutex<PoppedBatches>>,
    streams: Vec<LiveStream>,
    last_acks: Vec<AtomicU64>,
    dispatch_state: Mutex<DispatchState>,
    stop: AtomicBool,
    violations: Mutex<Vec<String>>,
}

/// State owned by the dispatch region.
struct DispatchState {
    current_index: u64,
    normal_dispatches: u64,
    last_dummy: Vec<u64>,
}

impl Engine {
    fn now_ns(&self) -> u64 {
        self.epoch.elapsed().as_nanos() as u64
    }

    /// Write the next batch if the stream is idle and the queue has one.
    /// The in-process send is the completed write, so its tag surfaces
    /// immediately.
    fn send_next(&self, id: TargetId) {
        let ti = id as usize;
        let mut send = self.streams[ti].send.lock().unwrap();
        if !send.write_ready {
            return;
        }
        let (batch, state) = {
            let mut q = self.queues[ti].lock().unwrap();
            let b = q.drain_batch(self.cfg.batch_size as usize);
            (b, q.state())
        };
        if batch.is_empty() || state == QueueState::Suspended {
            return;
        }
        self.popped[ti].lock().unwrap().set_current(batch.clone());
        let _ = send.tx.send(StreamMsg::Batch(batch));
        send.write_ready = false;
        let _ = self.streams[ti].cq.send(LiveTag::Write(id));
    }

    /// Arm a read if none is outstanding; completes immediately when an ack
    /// is already queued.
    fn read_next(&self, id: TargetId) {
        let ti = id as usize;
        let complete = {
            let mut read = self.streams[ti].read.lock().unwrap();
            if !read.read_ready {
                return;
            }
            read.read_ready = false;
            if let Some(ack) = read.queued.pop_front() {
                read.response = Some(ack);
                true
            } else {
                read.armed = true;
                false
            }
        };
        if complete {
            let _ = self.streams[ti].cq.send(LiveTag::Read(id));
        }
    }

    /// Route one entry: push each member target's message, kick the send and
    /// read paths, advance the dispatch frontier, and emit dummies on the
    /// interval boundary.
    fn dispatch(&self, entry: &crate::log::LogEntry) {
        let mut ds = self.dispatch_state.lock().unwrap();
        for &t in &entry.target_ids {
            if self.last_acks[t as usize].load(Ordering::Acquire) >= entry.index {
                continue;
            }
            let msg = Message::new(entry.index, entry.payload_for(t));
            {
                let mut q = self.queues[t as usize].lock().unwrap();
                q.push(msg, true, 0);
            }
            self.send_next(t);
            self.read_next(t);
        }
        ds.current_index = entry.index;
        ds.normal_dispatches += 1;
        if let Some(interval) = self.cfg.dummy_interval {
            if interval > 0 && ds.normal_dispatches.is_multiple_of(u64::from(interval)) {
                self.emit_dummies(&mut ds, entry, interval);
            }
        }
    }

    fn emit_dummies(&self, ds: &mut DispatchState, entry: &crate::log::LogEntry, interval: u32) {
        let ci = ds.current_index;
        for t in 0..self.cfg.targets {
            let ti = t as usize;
            let lagging = needs_dummy(self.last_acks[ti].load(Ordering::Acquire), ci, interval);
            if !lagging || ds.last_dummy[ti] == ci || entry.contains_target(t) {
                continue;
            }
            {
                let mut q = self.queues[ti].lock().unwrap();
                if q.state() != QueueState::Normal {
                    continue;
                }
                let term = q.current_term();
                q.push(Message::dummy(ci), true, term);
            }
            ds.last_dummy[ti] = ci;
            self.send_next(t);
            self.read_next(t);
        }
    }

    fn on_write_complete(&self, id: TargetId) {
        let ti = id as usize;
        self.popped[ti].lock().unwrap().pop_batch();
        self.streams[ti].send.lock().unwrap().write_ready = true;
        self.send_next(id);
    }

    fn on_read_complete(&self, id: TargetId) {
        let ti = id as usize;
        let ack = {
            let mut read = self.streams[ti].read.lock().unwrap();
            read.response.take()
        };
        let Some(ack) = ack else { return };
        self.last_acks[ti].store(ack.index, Ordering::Release);
        self.popped[ti].lock().unwrap().erase(ack.index);
        self.streams[ti].read.lock().unwrap().read_ready = true;
        self.read_next(id);
    }

    fn report_violation(&self, text: String) {
        self.violations.lock().unwrap().push(text);
        self.stop.store(true, Ordering::Release);
    }
}

/// Per-target shard thread: consume batches in order, enforce strictly
/// increasing indexes, persist, time the applies, acknowledge.
fn target_thread(
    engine: &Engine,
    id: TargetId,
    rx: Receiver<StreamMsg>,
    ack_every: u32,
) -> Vec<(u64, u64)> {
    let mut applies: Vec<(u64, u64)> = Vec::new();
    let mut persisted = 0u64;
    let mut since_ack = 0u32;
    while let Ok(msg) = rx.recv() {
        let batch = match msg {
            StreamMsg::Batch(b) => b,
            StreamMsg::Close => break,
        };
        let n = batch.len();
        for (i, m) in batch.messages.into_iter().enumerate() {
            if m.index <= persisted {
                engine.report_violation(format!(
                    "target {id}: index {} after persisting {persisted}",
                    m.index
                ));
                return applies;
            }
            persisted = m.index;
            if !m.is_dummy {
                applies.push((m.index, engine.now_ns()));
            }
            since_ack += 1;
            if since_ack >= ack_every || i + 1 == n {
                since_ack = 0;
                engine.streams[id as usize].deliver_ack(id, Ack { index: persisted });
            }
        }
    }
    applies
}

/// Membership layout for one entry: `payload_kb` one-KB units round-robin
/// over targets starting at the entry's offset. Zero units still address one
/// target with an empty payload.
fn bench_membership(cfg: &BenchConfig, seq: u32) -> Vec<(TargetId, u32)> {
    let t = cfg.targets as u32;
    let units = cfg.payload_kb;
    if units == 0 {
        return vec![((seq % t) as TargetId, 0)];
    }
    let mut per_target: Vec<(TargetId, u32)> = Vec::new();
    for j in 0..units.min(t) {
        let target = ((seq + j) % t) as TargetId;
        // distribute leftover units when payload spans fewer slots than units
        let share = units / t.min(units) + u32::from(j < units % t.min(units));
        per_target.push((target, share));
    }
    per_target.sort_unstable();
    per_target
}

/// Run the fault-free workload on real threads and collect the delay
/// distributions.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport, String> {
    assert!(cfg.targets >= 1 && cfg.targets <= 20, "targets must be 1..=20");
    let started = Instant::now();
    let (cq_tx, cq_rx) = mpsc::channel::<LiveTag>();

    let mut stream_rxs = Vec::new();
    let mut streams = Vec::new();
    for _ in 0..cfg.targets {
        let (tx, rx) = mpsc::channel::<StreamMsg>();
        stream_rxs.push(rx);
        streams.push(LiveStream {
            send: Mutex::new(SendSide {
                write_ready: true,
                tx,
            }),
            read: Mutex::new(ReadSide {
                read_ready: true,
                ..ReadSide::default()
            }),
            cq: cq_tx.clone(),
        });
    }

    let engine = Arc::new(Engine {
        cfg: cfg.clone(),
        epoch: started,
        log: LiveLog::new(),
        queues: (0..cfg.targets)
            .map(|_| Mutex::new(TargetQueue::new(Mutation::None)))
            .collect(),
        popped: (0..cfg.targets).map(|_| Mutex::new(PoppedBatches::new())).collect(),
        streams,
        last_acks: (0..cfg.targets).map(|_| AtomicU64::new(0)).collect(),
        dispatch_state: Mutex::new(DispatchState {
            current_index: 0,
            normal_dispatches: 0,
            last_dummy: vec![0; cfg.targets as usize],
        }),
        stop: AtomicBool::new(false),
        violations: Mutex::new(Vec::new()),
    });

    // a fresh stream has no outstanding read; arm one per target
    for t in 0..cfg.targets {
        engine.read_next(t);
    }

    // expected applied-entry count per target, from the deterministic layout
    let mut expected: Vec<u64> = vec![0; cfg.targets as usize];
    for seq in 0..cfg.entries {
        for (t, _) in bench_membership(cfg, seq) {
            expected[t as usize] += 1;
        }
    }

    let mut target_handles = Vec::new();
    for (t, rx) in stream_rxs.into_iter().enumerate() {
        let engine = engine.clone();
        let ack_every = cfg.ack_batching.max(1);
        target_handles.push(thread::spawn(move || {
            target_thread(&engine, t as TargetId, rx, ack_every)
        }));
    }

    let consumer = {
        let engine = engine.clone();
        thread::spawn(move || {
            while let Ok(tag) = cq_rx.recv() {
                match tag {
                    LiveTag::Write(id) => engine.on_write_complete(id),
                    LiveTag::Read(id) => engine.on_read_complete(id),
                    LiveTag::Shutdown => break,
                }
            }
        })
    };

    let health = {
        let engine = engine.clone();
        thread::spawn(move || {
            // fault-free run: nothing to suspend, just watch for shutdown
            while !engine.stop.load(Ordering::Acquire) {
                thread::park_timeout(Duration::from_millis(5));
            }
        })
    };

    let appender = {
        let engine = engine.clone();
        let cfg = cfg.clone();
        thread::spawn(move || {
            for seq in 0..cfg.entries {
                let layout = bench_membership(&cfg, seq);
                let targets: BTreeSet<TargetId> = layout.iter().map(|&(t, _)| t).collect();
                let payloads: Vec<Arc<[u8]>> = layout
                    .iter()
                    .map(|&(_, kb)| Arc::from(vec![0u8; kb as usize * 1024]))
                    .collect();
                engine.log.append(targets, payloads, engine.now_ns());
                if !cfg.append_latency.is_zero() {
                    thread::sleep(cfg.append_latency);
                }
                if engine.stop.load(Ordering::Acquire) {
                    return;
                }
            }
        })
    };

    let fetcher = {
        let engine = engine.clone();
        let total = u64::from(cfg.entries);
        thread::spawn(move || {
            let mut dispatch_times: Vec<(u64, u64)> = Vec::with_capacity(total as usize);
            let mut next = 1u64;
            while next <= total {
                let Some(entry) = engine.log.read_blocking(next, &engine.stop) else {
                    break;
                };
                dispatch_times.push((next, engine.now_ns()));
                engine.dispatch(&entry);
                next += 1;
            }
            dispatch_times
        })
    };

    // wait for full delivery (or a violation)
    let deadline = Instant::now() + Duration::from_secs(120);
    loop {
        let acked: Vec<u64> = engine
            .last_acks
            .iter()
            .map(|a| a.load(Ordering::Acquire))
            .collect();
        let done = {
            let log = engine.log.inner.lock().unwrap();
            log.len() == u64::from(cfg.entries)
                && (0..cfg.targets as usize).all(|t| {
                    log.next_index_for(t as TargetId, acked[t]).is_none()
                })
        };
        if done || engine.stop.load(Ordering::Acquire) {
            break;
        }
        if Instant::now() > deadline {
            engine.stop.store(true, Ordering::Release);
            appender.thread().unpark();
            return Err("run did not complete within 120s".into());
        }
        thread::sleep(Duration::from_millis(1));
    }

    // orderly shutdown: close streams, drain targets, stop consumer
    for s in &engine.streams {
        let send = s.send.lock().unwrap();
        let _ = send.tx.send(StreamMsg::Close);
    }
    let mut apply_times: Vec<Vec<(u64, u64)>> = Vec::new();
    for h in target_handles {
        apply_times.push(h.join().expect("target thread panicked"));
    }
    let _ = cq_tx.send(LiveTag::Shutdown);
    consumer.join().expect("consumer thread panicked");
    engine.stop.store(true, Ordering::Release);
    health.thread().unpark();
    health.join().expect("health thread panicked");
    appender.join().expect("appender thread panicked");
    let dispatch_times = fetcher.join().expect("fetcher thread panicked");

    {
        let violations = engine.violations.lock().unwrap();
        if let Some(v) = violations.first() {
            return Err(v.clone());
        }
    }
    for (t, applies) in apply_times.iter().enumerate() {
        if applies.len() as u64 != expected[t] {
            return Err(format!(
                "target {t}: applied {} entries, expected {}",
                applies.len(),
                expected[t]
            ));
        }
        if !applies.windows(2).all(|w| w[0].0 < w[1].0) {
            return Err(format!("target {t}: applies not strictly increasing"));
        }
    }

    let mut metrics = Metrics::default();
    {
        let log = engine.log.inner.lock().unwrap();
        let dispatch: std::collections::BTreeMap<u64, u64> = dispatch_times.into_iter().collect();
        for (t, applies) in apply_times.iter().enumerate() {
            for &(idx, apply_ns) in applies {
                let entry = log.read(idx).expect("applied entry must exist");
                metrics.push(EntryRecord {
                    index: idx,
                    target: t as TargetId,
                    commit_ns: entry.commit_time,
                    dispatch_ns: dispatch.get(&idx).copied().unwrap_or(entry.commit_time),
                    apply_ns,
                });
            }
        }
    }

    Ok(BenchReport {
        metrics,
        elapsed: started.elapsed(),
    })
}
