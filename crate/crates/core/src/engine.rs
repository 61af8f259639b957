//! Sequential and master/slave execution of modules.
//!
//! The parallel executor follows a single-collection-point protocol:
//!
//! 1. the master splits the input expression into chunks of `chunk_size`
//!    terms and sends `ModuleBegin` to every slave;
//! 2. one chunk goes to each slave, and every `ChunkDone` reply earns that
//!    slave the next unsent chunk;
//! 3. a slave rewrites each term of a chunk, sorts the result into a run and
//!    folds it into its slave-local run;
//! 4. after the last chunk the master sends `ModuleEnd` and every slave
//!    answers with its single accumulated run;
//! 5. the master merges the runs into the module's output.
//!
//! With `master_computes` set the master also rewrites chunks whenever its
//! inbox is empty, and contributes its own run to the final merge.

use std::collections::{BTreeMap, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::merge::{build_run, merge_expressions, merge_runs, SortedRun, WorkerId};
use crate::parser::{Module, Program};
use crate::rewrite::Rewriter;
use crate::term::{normalize, Expression, Term};
use crate::transport::{
    star, Backend, MasterEndpoint, Message, MessageKind, SlaveEndpoint, TransportError,
    TransportStats, DEFAULT_MAILBOX_CAPACITY,
};

pub const DEFAULT_CHUNK_SIZE: usize = 1000;

/// How chunks are assigned to slaves.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum DispatchPolicy {
    /// Next unsent chunk to whichever slave reports idle first.
    #[default]
    Dynamic,
    /// Chunk `i` to participant `i mod n`, fixed in advance. Only useful to
    /// check that the result does not depend on the assignment.
    StaticRoundRobin,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    /// Number of slaves. Zero selects the sequential executor in
    /// [`run_program`].
    pub nslaves: usize,
    pub chunk_size: usize,
    pub backend: Backend,
    pub master_computes: bool,
    /// Seed for workload generators.
    pub seed: u64,
    pub mailbox_capacity: usize,
    pub dispatch: DispatchPolicy,
    #[doc(hidden)]
    pub fail_worker: Option<u32>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            nslaves: 1,
            chunk_size: DEFAULT_CHUNK_SIZE,
            backend: Backend::SharedBuffer,
            master_computes: false,
            seed: 0,
            mailbox_capacity: DEFAULT_MAILBOX_CAPACITY,
            dispatch: DispatchPolicy::Dynamic,
            fail_worker: None,
        }
    }
}

impl RunConfig {
    pub fn parallel(nslaves: usize, chunk_size: usize, backend: Backend) -> Self {
        RunConfig {
            nslaves,
            chunk_size,
            backend,
            ..Default::default()
        }
    }

    pub fn sequential() -> Self {
        RunConfig {
            nslaves: 0,
            ..Default::default()
        }
    }

    pub fn is_sequential(&self) -> bool {
        self.nslaves == 0
    }

    fn validate_parallel(&self) -> Result<(), EngineError> {
        if self.nslaves == 0 {
            return Err(EngineError::InvalidConfig(
                "nslaves must be at least 1".into(),
            ));
        }
        if self.chunk_size == 0 {
            return Err(EngineError::InvalidConfig(
                "chunk_size must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("worker {worker} failed: {reason}")]
    WorkerFailed { worker: u32, reason: String },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error(transparent)]
    Transport(TransportError),
}

impl From<TransportError> for EngineError {
    fn from(e: TransportError) -> Self {
        match e {
            TransportError::PeerFailed { worker, reason } => {
                EngineError::WorkerFailed { worker, reason }
            }
            other => EngineError::Transport(other),
        }
    }
}

/// Timings and counts for one module pass over one expression.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PhaseMetrics {
    /// Master time spent partitioning and sending.
    pub t_distribute: Duration,
    pub t_compute_max: Duration,
    pub t_local_sort_max: Duration,
    pub t_final_merge: Duration,
    pub t_wall: Duration,
    /// Time the master spent blocked waiting for slave messages.
    pub t_master_wait: Duration,
    /// Rewrite plus local sort time per participant, master included when
    /// it computes.
    pub per_slave_busy: BTreeMap<WorkerId, Duration>,
    /// Input terms processed per participant.
    pub per_worker_terms: BTreeMap<WorkerId, u64>,
    pub chunks: u64,
    pub terms_in: u64,
    pub terms_generated: u64,
    pub terms_out: u64,
}

impl PhaseMetrics {
    /// Master time that is neither distribution, final merge nor waiting.
    pub fn master_other_busy(&self) -> Duration {
        self.t_wall
            .saturating_sub(self.t_distribute)
            .saturating_sub(self.t_final_merge)
            .saturating_sub(self.t_master_wait)
            .saturating_sub(
                self.per_slave_busy
                    .get(&WorkerId::MASTER)
                    .copied()
                    .unwrap_or_default(),
            )
    }

    /// Sums the durations and counts of several passes.
    pub fn accumulate(&mut self, other: &PhaseMetrics) {
        self.t_distribute += other.t_distribute;
        self.t_compute_max += other.t_compute_max;
        self.t_local_sort_max += other.t_local_sort_max;
        self.t_final_merge += other.t_final_merge;
        self.t_wall += other.t_wall;
        self.t_master_wait += other.t_master_wait;
        for (k, v) in &other.per_slave_busy {
            *self.per_slave_busy.entry(*k).or_default() += *v;
        }
        for (k, v) in &other.per_worker_terms {
            *self.per_worker_terms.entry(*k).or_default() += *v;
        }
        self.chunks += other.chunks;
        self.terms_in += other.terms_in;
        self.terms_generated += other.terms_generated;
        self.terms_out += other.terms_out;
    }
}

/// A contiguous slice of the input handed to one participant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk<'a> {
    pub seq: u64,
    pub terms: &'a [Term],
}

/// Splits an expression into `ceil(len / chunk_size)` chunks in order.
pub fn partition(e: &Expression, chunk_size: usize) -> Vec<Chunk<'_>> {
    assert!(chunk_size > 0, "chunk_size must be positive");
    e.terms()
        .chunks(chunk_size)
        .enumerate()
        .map(|(seq, terms)| Chunk {
            seq: seq as u64,
            terms,
        })
        .collect()
}

fn split_owned(terms: Vec<Term>, chunk_size: usize) -> VecDeque<(u64, Vec<Term>)> {
    let mut out = VecDeque::with_capacity(terms.len().div_ceil(chunk_size));
    let mut it = terms.into_iter();
    let mut seq = 0;
    loop {
        let chunk: Vec<Term> = it.by_ref().take(chunk_size).collect();
        if chunk.is_empty() {
            return out;
        }
        out.push_back((seq, chunk));
        seq += 1;
    }
}

/// The reference executor: rewrite every term, then normalize once.
pub fn execute_sequential(e: &Expression, m: &Module) -> Expression {
    execute_sequential_timed(e, m).0
}

fn execute_sequential_timed(e: &Expression, m: &Module) -> (Expression, PhaseMetrics) {
    let start = Instant::now();
    let mut rw = Rewriter::new(m);
    let mut raw = Vec::new();
    for t in e.terms() {
        rw.apply_into(t, &mut raw);
    }
    let t_compute = start.elapsed();
    let generated = raw.len() as u64;
    let sort_start = Instant::now();
    let out = normalize(raw);
    let t_sort = sort_start.elapsed();
    let metrics = PhaseMetrics {
        t_compute_max: t_compute,
        t_local_sort_max: t_sort,
        t_wall: start.elapsed(),
        per_slave_busy: BTreeMap::from([(WorkerId::MASTER, t_compute + t_sort)]),
        per_worker_terms: BTreeMap::from([(WorkerId::MASTER, e.len() as u64)]),
        chunks: 1,
        terms_in: e.len() as u64,
        terms_generated: generated,
        terms_out: out.len() as u64,
        ..Default::default()
    };
    (out, metrics)
}

/// Runs one module over one expression on a fresh set of slaves.
pub fn execute_parallel(
    e: &Expression,
    m: &Module,
    cfg: &RunConfig,
) -> Result<(Expression, PhaseMetrics, TransportStats), EngineError> {
    cfg.validate_parallel()?;
    let modules = std::slice::from_ref(m);
    with_slaves(modules, cfg, |master, clocks| {
        let (out, metrics) = run_pass(master, clocks, e.clone(), 0, m, cfg)?;
        Ok((out, metrics))
    })
    .map(|((out, metrics), stats)| (out, metrics, stats))
}

/// Metrics for one module applied to one local expression.
#[derive(Debug, Clone, PartialEq)]
pub struct PassMetrics {
    pub module_index: usize,
    pub expression: String,
    pub metrics: PhaseMetrics,
    /// Transport traffic of this pass. Shutdown messages belong to no pass.
    pub stats: TransportStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProgramOutput {
    /// Final expressions in definition order.
    pub expressions: Vec<(String, Expression)>,
    pub passes: Vec<PassMetrics>,
    pub stats: TransportStats,
}

impl ProgramOutput {
    pub fn get(&self, name: &str) -> Option<&Expression> {
        self.expressions
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, e)| e)
    }

    /// Metrics of all passes of module `index`, summed over expressions.
    pub fn module_metrics(&self, index: usize) -> PhaseMetrics {
        let mut m = PhaseMetrics::default();
        for p in self.passes.iter().filter(|p| p.module_index == index) {
            m.accumulate(&p.metrics);
        }
        m
    }

    /// Transport traffic of all passes of module `index`.
    pub fn module_stats(&self, index: usize) -> TransportStats {
        let mut s = TransportStats::default();
        for p in self.passes.iter().filter(|p| p.module_index == index) {
            s.accumulate(&p.stats);
        }
        s
    }

    /// Metrics summed over every pass.
    pub fn total_metrics(&self) -> PhaseMetrics {
        let mut m = PhaseMetrics::default();
        for p in &self.passes {
            m.accumulate(&p.metrics);
        }
        m
    }
}

/// Executes every module of a program in order over every local
/// expression. `cfg.nslaves == 0` runs the sequential executor instead.
pub fn run_program(p: &Program, cfg: &RunConfig) -> Result<ProgramOutput, EngineError> {
    let mut exprs = p.initial.clone();
    let mut passes = Vec::with_capacity(p.modules.len() * exprs.len());

    if cfg.is_sequential() {
        for (mi, module) in p.modules.iter().enumerate() {
            for (name, e) in exprs.iter_mut() {
                let (out, metrics) = execute_sequential_timed(e, module);
                *e = out;
                passes.push(PassMetrics {
                    module_index: mi,
                    expression: name.clone(),
                    metrics,
                    stats: TransportStats::default(),
                });
            }
        }
        return Ok(ProgramOutput {
            expressions: exprs,
            passes,
            stats: TransportStats::default(),
        });
    }

    cfg.validate_parallel()?;
    let (_, stats) = with_slaves(&p.modules, cfg, |master, clocks| {
        for (mi, module) in p.modules.iter().enumerate() {
            for (name, e) in exprs.iter_mut() {
                let input = std::mem::take(e);
                let before = master.stats();
                let (out, metrics) = run_pass(master, clocks, input, mi, module, cfg)?;
                *e = out;
                passes.push(PassMetrics {
                    module_index: mi,
                    expression: name.clone(),
                    metrics,
                    stats: master.stats().since(&before),
                });
            }
        }
        Ok(())
    })?;
    Ok(ProgramOutput {
        expressions: exprs,
        passes,
        stats,
    })
}

/// Per-slave counters, written by the slave and read by the master after
/// the slave's `RunReturn` has been received.
#[derive(Debug, Default)]
struct SlaveClock {
    compute_ns: AtomicU64,
    sort_ns: AtomicU64,
    terms_in: AtomicU64,
    terms_generated: AtomicU64,
}

impl SlaveClock {
    fn reset(&self) {
        for c in [
            &self.compute_ns,
            &self.sort_ns,
            &self.terms_in,
            &self.terms_generated,
        ] {
            c.store(0, Ordering::Relaxed);
        }
    }
}

/// Spawns the slaves, runs `master_work` on the calling thread, shuts the
/// slaves down and joins them. No slave outlives this call.
fn with_slaves<T>(
    modules: &[Module],
    cfg: &RunConfig,
    master_work: impl FnOnce(&mut MasterEndpoint, &[SlaveClock]) -> Result<T, EngineError>,
) -> Result<(T, TransportStats), EngineError> {
    let (mut master, slaves) = star(cfg.nslaves, cfg.backend, cfg.mailbox_capacity);
    let clocks: Vec<SlaveClock> = (0..cfg.nslaves).map(|_| SlaveClock::default()).collect();

    thread::scope(|s| {
        for (ep, clock) in slaves.into_iter().zip(&clocks) {
            let fail = cfg.fail_worker == Some(ep.id().0);
            s.spawn(move || slave_main(ep, modules, clock, fail));
        }
        let result = master_work(&mut master, &clocks);
        if result.is_ok() {
            for i in 0..cfg.nslaves {
                master.send(WorkerId(i as u32), Message::shutdown())?;
            }
        }
        let stats = master.stats();
        // dropping the master unblocks any slave still waiting on a receive
        drop(master);
        result.map(|r| (r, stats))
    })
}

fn slave_main(mut ep: SlaveEndpoint, modules: &[Module], clock: &SlaveClock, fail: bool) {
    let outcome = catch_unwind(AssertUnwindSafe(|| {
        slave_loop(&mut ep, modules, clock, fail)
    }));
    match outcome {
        Ok(Ok(())) => {}
        // the master is gone or already failing; nothing to report to
        Ok(Err(TransportError::ChannelClosed(_))) => {}
        Ok(Err(e)) => ep.report_failure(e.to_string()),
        Err(panic) => {
            let reason = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            ep.report_failure(reason);
        }
    }
}

/// Folds runs into a stack of sorted runs with roughly doubling sizes, so
/// absorbing many small chunk runs costs O(n log n) overall.
#[derive(Debug, Default)]
struct RunAccumulator {
    levels: Vec<Expression>,
}

impl RunAccumulator {
    fn push(&mut self, mut run: Expression) {
        while let Some(top) = self.levels.last() {
            if top.len() > 2 * run.len() {
                break;
            }
            let top = self.levels.pop().unwrap();
            run = merge_expressions(vec![top, run]);
        }
        self.levels.push(run);
    }

    fn finish(self) -> Expression {
        merge_expressions(self.levels)
    }
}

fn slave_loop(
    ep: &mut SlaveEndpoint,
    modules: &[Module],
    clock: &SlaveClock,
    fail: bool,
) -> Result<(), TransportError> {
    let mut current: Option<(Rewriter<'_>, RunAccumulator)> = None;
    loop {
        let msg = ep.recv()?;
        match msg.kind {
            MessageKind::ModuleBegin => {
                let module = &modules[msg.chunk_seq as usize];
                clock.reset();
                current = Some((Rewriter::new(module), RunAccumulator::default()));
            }
            MessageKind::ChunkAssignment => {
                if fail {
                    panic!("injected failure in worker {}", ep.id().0);
                }
                let (rw, acc) = current.as_mut().expect("chunk before ModuleBegin");
                let t0 = Instant::now();
                let batch = rw.apply_chunk(&msg.payload, msg.chunk_seq);
                let t1 = Instant::now();
                let generated = batch.terms.len() as u64;
                acc.push(build_run(batch.terms, ep.id()).terms);
                let t2 = Instant::now();
                clock
                    .compute_ns
                    .fetch_add((t1 - t0).as_nanos() as u64, Ordering::Relaxed);
                clock
                    .sort_ns
                    .fetch_add((t2 - t1).as_nanos() as u64, Ordering::Relaxed);
                clock
                    .terms_in
                    .fetch_add(msg.payload.len() as u64, Ordering::Relaxed);
                clock
                    .terms_generated
                    .fetch_add(generated, Ordering::Relaxed);
                drop(msg.payload);
                ep.reply(Message::control(MessageKind::ChunkDone, msg.chunk_seq))?;
            }
            MessageKind::ModuleEnd => {
                let (_, acc) = current.take().expect("ModuleEnd before ModuleBegin");
                let t0 = Instant::now();
                let run = acc.finish();
                clock
                    .sort_ns
                    .fetch_add(t0.elapsed().as_nanos() as u64, Ordering::Relaxed);
                ep.reply(Message::run(run.into_terms()))?;
            }
            MessageKind::Shutdown => return Ok(()),
            MessageKind::ChunkDone | MessageKind::RunReturn => {
                return Err(TransportError::InvalidMessage(
                    "slave received a slave-to-master message",
                ));
            }
        }
    }
}

/// Chunks still to hand out, organized by the dispatch policy.
enum Pending {
    Shared(VecDeque<(u64, Vec<Term>)>),
    /// One queue per participant; the master's queue is last when it computes.
    PerWorker(Vec<VecDeque<(u64, Vec<Term>)>>),
}

impl Pending {
    fn new(chunks: VecDeque<(u64, Vec<Term>)>, cfg: &RunConfig) -> Self {
        match cfg.dispatch {
            DispatchPolicy::Dynamic => Pending::Shared(chunks),
            DispatchPolicy::StaticRoundRobin => {
                let n = cfg.nslaves + usize::from(cfg.master_computes);
                let mut queues = vec![VecDeque::new(); n];
                for (i, c) in chunks.into_iter().enumerate() {
                    queues[i % n].push_back(c);
                }
                Pending::PerWorker(queues)
            }
        }
    }

    fn next_for_slave(&mut self, slave: usize) -> Option<(u64, Vec<Term>)> {
        match self {
            Pending::Shared(q) => q.pop_front(),
            Pending::PerWorker(qs) => qs[slave].pop_front(),
        }
    }

    fn next_for_master(&mut self, nslaves: usize) -> Option<(u64, Vec<Term>)> {
        match self {
            Pending::Shared(q) => q.pop_front(),
            Pending::PerWorker(qs) => qs.get_mut(nslaves).and_then(VecDeque::pop_front),
        }
    }

    fn master_has_work(&self, nslaves: usize) -> bool {
        match self {
            Pending::Shared(q) => !q.is_empty(),
            Pending::PerWorker(qs) => qs.get(nslaves).is_some_and(|q| !q.is_empty()),
        }
    }
}

fn run_pass(
    master: &mut MasterEndpoint,
    clocks: &[SlaveClock],
    e: Expression,
    module_index: usize,
    module: &Module,
    cfg: &RunConfig,
) -> Result<(Expression, PhaseMetrics), EngineError> {
    let wall = Instant::now();
    let nslaves = master.nslaves();
    let mut metrics = PhaseMetrics {
        terms_in: e.len() as u64,
        ..Default::default()
    };

    let t = Instant::now();
    let chunks = split_owned(e.into_terms(), cfg.chunk_size);
    metrics.chunks = chunks.len() as u64;
    let mut pending = Pending::new(chunks, cfg);
    for i in 0..nslaves {
        master.send(
            WorkerId(i as u32),
            Message::control(MessageKind::ModuleBegin, module_index as u64),
        )?;
    }
    let mut outstanding = 0usize;
    for i in 0..nslaves {
        if let Some((seq, terms)) = pending.next_for_slave(i) {
            master.send(WorkerId(i as u32), Message::chunk(seq, terms))?;
            outstanding += 1;
        }
    }
    metrics.t_distribute += t.elapsed();

    let mut own: Option<(Rewriter<'_>, RunAccumulator)> = None;
    let (mut own_compute, mut own_sort) = (Duration::ZERO, Duration::ZERO);
    let (mut own_terms, mut own_generated) = (0u64, 0u64);

    let on_message = |master: &mut MasterEndpoint,
                      from: WorkerId,
                      msg: Message,
                      pending: &mut Pending,
                      outstanding: &mut usize,
                      metrics: &mut PhaseMetrics|
     -> Result<(), EngineError> {
        if msg.kind != MessageKind::ChunkDone {
            return Err(EngineError::Protocol(format!(
                "expected ChunkDone from worker {}, got {:?}",
                from.0, msg.kind
            )));
        }
        *outstanding -= 1;
        let t = Instant::now();
        if let Some((seq, terms)) = pending.next_for_slave(from.0 as usize) {
            master.send(from, Message::chunk(seq, terms))?;
            *outstanding += 1;
        }
        metrics.t_distribute += t.elapsed();
        Ok(())
    };

    loop {
        let master_work = cfg.master_computes && pending.master_has_work(nslaves);
        if outstanding == 0 && !master_work {
            break;
        }
        if master_work {
            if let Some((from, msg)) = master.try_recv_any()? {
                on_message(
                    master,
                    from,
                    msg,
                    &mut pending,
                    &mut outstanding,
                    &mut metrics,
                )?;
                continue;
            }
            let (seq, terms) = pending.next_for_master(nslaves).expect("checked above");
            let (rw, acc) =
                own.get_or_insert_with(|| (Rewriter::new(module), RunAccumulator::default()));
            let t0 = Instant::now();
            let batch = rw.apply_chunk(&terms, seq);
            let t1 = Instant::now();
            own_generated += batch.terms.len() as u64;
            own_terms += terms.len() as u64;
            acc.push(build_run(batch.terms, WorkerId::MASTER).terms);
            own_compute += t1 - t0;
            own_sort += t1.elapsed();
        } else {
            let t = Instant::now();
            let (from, msg) = master.recv_any()?;
            metrics.t_master_wait += t.elapsed();
            on_message(
                master,
                from,
                msg,
                &mut pending,
                &mut outstanding,
                &mut metrics,
            )?;
        }
    }

    let t = Instant::now();
    for i in 0..nslaves {
        master.send(
            WorkerId(i as u32),
            Message::control(MessageKind::ModuleEnd, module_index as u64),
        )?;
    }
    metrics.t_distribute += t.elapsed();

    let mut runs: Vec<Option<SortedRun>> = vec![None; nslaves];
    let mut received = 0;
    while received < nslaves {
        let t = Instant::now();
        let (from, msg) = master.recv_any()?;
        metrics.t_master_wait += t.elapsed();
        let slot = runs.get_mut(from.0 as usize).ok_or_else(|| {
            EngineError::Protocol(format!("message from unknown worker {}", from.0))
        })?;
        if msg.kind != MessageKind::RunReturn || slot.is_some() {
            return Err(EngineError::Protocol(format!(
                "unexpected {:?} from worker {} at module end",
                msg.kind, from.0
            )));
        }
        let terms = Expression::try_from_sorted(msg.payload).ok_or_else(|| {
            EngineError::Protocol(format!("worker {} returned an unsorted run", from.0))
        })?;
        *slot = Some(SortedRun {
            terms,
            producer: from,
        });
        received += 1;
    }

    let mut runs: Vec<SortedRun> = runs.into_iter().flatten().collect();
    if let Some((_, acc)) = own {
        let t0 = Instant::now();
        runs.push(SortedRun {
            terms: acc.finish(),
            producer: WorkerId::MASTER,
        });
        own_sort += t0.elapsed();
    }

    for (i, clock) in clocks.iter().enumerate() {
        let compute = Duration::from_nanos(clock.compute_ns.load(Ordering::Relaxed));
        let sort = Duration::from_nanos(clock.sort_ns.load(Ordering::Relaxed));
        metrics.t_compute_max = metrics.t_compute_max.max(compute);
        metrics.t_local_sort_max = metrics.t_local_sort_max.max(sort);
        metrics
            .per_slave_busy
            .insert(WorkerId(i as u32), compute + sort);
        metrics
            .per_worker_terms
            .insert(WorkerId(i as u32), clock.terms_in.load(Ordering::Relaxed));
        metrics.terms_generated += clock.terms_generated.load(Ordering::Relaxed);
    }
    if cfg.master_computes {
        metrics.t_compute_max = metrics.t_compute_max.max(own_compute);
        metrics.t_local_sort_max = metrics.t_local_sort_max.max(own_sort);
        metrics
            .per_slave_busy
            .insert(WorkerId::MASTER, own_compute + own_sort);
        metrics.per_worker_terms.insert(WorkerId::MASTER, own_terms);
        metrics.terms_generated += own_generated;
    }

    let t = Instant::now();
    let out = merge_runs(runs);
    metrics.t_final_merge = t.elapsed();
    metrics.terms_out = out.len() as u64;
    metrics.t_wall = wall.elapsed();
    Ok((out, metrics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_program;

    fn program(text: &str) -> Program {
        parse_program(text).unwrap()
    }

    #[test]
    fn partition_reproduces_input() {
        let p = program("symbols x,y; local F = (x+y)^6; .sort .end");
        let e = &p.initial[0].1;
        for size in 1..=8 {
            let chunks = partition(e, size);
            assert_eq!(chunks.len(), e.len().div_ceil(size));
            let flat: Vec<Term> = chunks.iter().flat_map(|c| c.terms.to_vec()).collect();
            assert_eq!(flat, e.terms());
            assert!(chunks
                .iter()
                .enumerate()
                .all(|(i, c)| c.seq == i as u64 && !c.terms.is_empty()));
        }
    }

    #[test]
    fn split_owned_matches_partition() {
        let p = program("symbols x,y; local F = (x+y)^6; .sort .end");
        let e = &p.initial[0].1;
        let owned = split_owned(e.terms().to_vec(), 3);
        let borrowed = partition(e, 3);
        assert_eq!(owned.len(), borrowed.len());
        for ((s, ts), c) in owned.iter().zip(&borrowed) {
            assert_eq!(*s, c.seq);
            assert_eq!(ts.as_slice(), c.terms);
        }
    }

    #[test]
    fn sequential_examples() {
        let p = program("symbols x,y; local F = x+y; multiply x-y; .sort .end");
        let e = &p.initial[0].1;
        assert_eq!(execute_sequential(e, &Module::default()), *e);
        let out = execute_sequential(e, &p.modules[0]);
        let expect = program("symbols x,y; local F = x^2-y^2; .sort .end");
        assert_eq!(out, expect.initial[0].1);
    }

    #[test]
    fn parallel_single_slave_matches_sequential() {
        let p = program("symbols x,y; local F = (x+y)^4; id x = x+1; .sort .end");
        let e = &p.initial[0].1;
        let seq = execute_sequential(e, &p.modules[0]);
        for backend in [Backend::MessagePassing, Backend::SharedBuffer] {
            let (out, m, _) =
                execute_parallel(e, &p.modules[0], &RunConfig::parallel(1, 2, backend)).unwrap();
            assert_eq!(out, seq);
            assert_eq!(m.terms_in, 5);
            assert_eq!(m.terms_out, seq.len() as u64);
            assert!(m.t_wall >= m.t_final_merge);
        }
    }

    #[test]
    fn four_slaves_chunk_one() {
        let p = program("symbols x,y; local F = (x+y)^4; id x = x+1; .sort .end");
        let e = &p.initial[0].1;
        let seq = execute_sequential(e, &p.modules[0]);
        let cfg = RunConfig::parallel(4, 1, Backend::SharedBuffer);
        let (out, m, _) = execute_parallel(e, &p.modules[0], &cfg).unwrap();
        assert_eq!(out, seq);
        assert_eq!(m.chunks, 5);
        assert_eq!(m.per_worker_terms.values().sum::<u64>(), 5);
        // every slave got one of the first four chunks
        assert!(m.per_worker_terms.values().all(|&n| n >= 1));
    }

    #[test]
    fn master_computes_conserves_work() {
        let p = program("symbols x,y,z; local F = (x+y+z)^5; id x = y+z+1; .sort .end");
        let e = &p.initial[0].1;
        let seq = execute_sequential(e, &p.modules[0]);
        for dispatch in [DispatchPolicy::Dynamic, DispatchPolicy::StaticRoundRobin] {
            let cfg = RunConfig {
                master_computes: true,
                dispatch,
                ..RunConfig::parallel(2, 2, Backend::MessagePassing)
            };
            let (out, m, _) = execute_parallel(e, &p.modules[0], &cfg).unwrap();
            assert_eq!(out, seq);
            assert_eq!(m.per_worker_terms.values().sum::<u64>(), e.len() as u64);
        }
    }

    #[test]
    fn static_round_robin_master_share() {
        let p = program("symbols x,y; local F = (x+y)^8; multiply x; .sort .end");
        let e = &p.initial[0].1;
        let cfg = RunConfig {
            master_computes: true,
            dispatch: DispatchPolicy::StaticRoundRobin,
            ..RunConfig::parallel(2, 1, Backend::SharedBuffer)
        };
        let (_, m, _) = execute_parallel(e, &p.modules[0], &cfg).unwrap();
        // nine chunks over three participants
        assert_eq!(m.per_worker_terms[&WorkerId::MASTER], 3);
        assert_eq!(m.per_worker_terms[&WorkerId(0)], 3);
    }

    #[test]
    fn zero_expression_runs_cleanly() {
        let p = program("symbols x; local F = x - x; multiply x; .sort .end");
        let (out, m, stats) = execute_parallel(
            &p.initial[0].1,
            &p.modules[0],
            &RunConfig::parallel(3, 4, Backend::MessagePassing),
        )
        .unwrap();
        assert!(out.is_zero());
        assert_eq!(m.chunks, 0);
        // begin, end, shutdown to each slave; one empty run back from each
        assert_eq!(stats.messages(), 3 * 4);
    }

    #[test]
    fn worker_failure_is_reported() {
        let p = program("symbols x; local F = (x+1)^5; multiply x; .sort .end");
        let cfg = RunConfig {
            fail_worker: Some(1),
            ..RunConfig::parallel(3, 1, Backend::SharedBuffer)
        };
        let err = execute_parallel(&p.initial[0].1, &p.modules[0], &cfg).unwrap_err();
        match err {
            EngineError::WorkerFailed { worker, reason } => {
                assert_eq!(worker, 1);
                assert!(reason.contains("injected failure"));
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let p = program("symbols x; local F = x; .sort .end");
        let e = &p.initial[0].1;
        let m = &p.modules[0];
        assert!(matches!(
            execute_parallel(e, m, &RunConfig::parallel(0, 1, Backend::SharedBuffer)),
            Err(EngineError::InvalidConfig(_))
        ));
        assert!(matches!(
            execute_parallel(e, m, &RunConfig::parallel(1, 0, Backend::SharedBuffer)),
            Err(EngineError::InvalidConfig(_))
        ));
    }

    #[test]
    fn run_program_examples() {
        let p = program("symbols x,y; local F = x+y; .sort .end");
        let out = run_program(&p, &RunConfig::parallel(2, 1, Backend::SharedBuffer)).unwrap();
        assert_eq!(out.get("F"), Some(&p.initial[0].1));

        let p = program("symbols x,y; local F = 1; multiply x+y; .sort multiply x-y; .sort .end");
        let expect = program("symbols x,y; local F = x^2-y^2; .sort .end");
        for cfg in [
            RunConfig::sequential(),
            RunConfig::parallel(3, 1, Backend::MessagePassing),
        ] {
            let out = run_program(&p, &cfg).unwrap();
            assert_eq!(out.get("F"), Some(&expect.initial[0].1));
            assert_eq!(out.passes.len(), 2);
        }
    }

    #[test]
    fn run_program_multiple_expressions() {
        let p = program(
            "symbols x,y; local F = x+y; local G = x-y; id x = y+1; .sort multiply 2; .sort .end",
        );
        let seq = run_program(&p, &RunConfig::sequential()).unwrap();
        let par = run_program(&p, &RunConfig::parallel(2, 1, Backend::MessagePassing)).unwrap();
        assert_eq!(seq.expressions, par.expressions);
        assert_eq!(par.passes.len(), 4);
        assert_eq!(par.passes[1].expression, "G");
        assert_eq!(par.module_metrics(1).terms_in, 3);
    }

    #[test]
    fn run_accumulator_merges_everything() {
        let p = program("symbols x,y; local F = (x+y)^9; .sort .end");
        let e = p.initial[0].1.clone();
        let mut acc = RunAccumulator::default();
        for t in e.terms() {
            acc.push(Expression::from_term(t.clone()));
            acc.push(Expression::from_term(t.clone()));
        }
        assert!(acc.levels.len() <= 6);
        assert_eq!(acc.finish(), e.add(&e));
    }
}
