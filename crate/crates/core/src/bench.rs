//! Benchmark support: workload generators, sweeps over engine
//! configurations, and speedup normalization.
//!
//! Two speedup conventions are supported. The two-processor convention
//! divides the wall time of master plus one slave by the wall time at `p`
//! slaves; the sequential convention divides the sequential executor's wall
//! time by the wall time at `p` slaves.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::engine::{run_program, EngineError, PhaseMetrics, RunConfig};
use crate::parser::Program;
use crate::transport::{Backend, TransportStats};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("missing reference timing: {0}")]
    MissingReference(&'static str),
    #[error(
        "unknown workload kind `{0}` (expected `expand`, `substitute-chain` or `multiply-chain`)"
    )]
    UnknownWorkload(String),
    #[error("bad workload spec `{0}` (expected kind:scale:seed)")]
    BadWorkloadSpec(String),
    #[error("scale must be at least 1")]
    BadScale,
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WorkloadKind {
    /// `(x+y+z+w)^scale`, then one substitute-and-multiply module.
    Expand,
    /// Several modules of random substitutions and multiplications.
    SubstituteChain,
    /// `(x+y+z+w+v+1)^scale`, then three modules each multiplying by a
    /// random linear form. Little cancellation, so most terms cross the
    /// transport twice.
    MultiplyChain,
}

impl FromStr for WorkloadKind {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "expand" => Ok(WorkloadKind::Expand),
            "substitute-chain" => Ok(WorkloadKind::SubstituteChain),
            "multiply-chain" => Ok(WorkloadKind::MultiplyChain),
            other => Err(BenchError::UnknownWorkload(other.to_string())),
        }
    }
}

/// Parsed form of `kind:scale:seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    pub scale: u32,
    pub seed: u64,
}

impl FromStr for WorkloadSpec {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || BenchError::BadWorkloadSpec(s.to_string());
        let mut parts = s.split(':');
        let kind = parts.next().ok_or_else(bad)?.parse()?;
        let scale = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let seed = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        if parts.next().is_some() {
            return Err(bad());
        }
        Ok(WorkloadSpec { kind, scale, seed })
    }
}

impl WorkloadSpec {
    pub fn generate(&self) -> Result<String, BenchError> {
        generate_workload(self.kind, self.scale, self.seed)
    }

    pub fn name(&self) -> String {
        let kind = match self.kind {
            WorkloadKind::Expand => "expand",
            WorkloadKind::SubstituteChain => "substitute-chain",
            WorkloadKind::MultiplyChain => "multiply-chain",
        };
        format!("{kind}:{}:{}", self.scale, self.seed)
    }
}

fn random_coeff(rng: &mut ChaCha8Rng) -> i64 {
    let c = rng.gen_range(1..=3);
    if rng.gen_bool(0.5) {
        -c
    } else {
        c
    }
}

fn push_signed(out: &mut String, c: i64, body: &str) {
    if c < 0 {
        out.push('-');
    } else if !out.is_empty() {
        out.push('+');
    }
    let c = c.abs();
    match (c, body.is_empty()) {
        (_, true) => write!(out, "{c}").unwrap(),
        (1, false) => out.push_str(body),
        _ => write!(out, "{c}*{body}").unwrap(),
    }
}

/// Random linear form with every symbol of `syms` plus a constant.
fn random_linear(rng: &mut ChaCha8Rng, syms: &[&str]) -> String {
    let mut out = String::new();
    for s in syms {
        push_signed(&mut out, random_coeff(rng), s);
    }
    push_signed(&mut out, random_coeff(rng), "");
    out
}

/// Random polynomial of `nterms` terms of degree at most two.
fn random_poly(rng: &mut ChaCha8Rng, syms: &[&str], nterms: usize) -> String {
    let mut out = String::new();
    for _ in 0..nterms {
        let deg = rng.gen_range(0..=2);
        let body: Vec<&str> = (0..deg).map(|_| *syms.choose(rng).unwrap()).collect();
        push_signed(&mut out, random_coeff(rng), &body.join("*"));
    }
    out
}

/// Deterministic program text for a benchmark workload.
pub fn generate_workload(kind: WorkloadKind, scale: u32, seed: u64) -> Result<String, BenchError> {
    if scale == 0 {
        return Err(BenchError::BadScale);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::new();
    match kind {
        WorkloadKind::Expand => {
            writeln!(out, "* expand workload, scale {scale}, seed {seed}").unwrap();
            writeln!(out, "symbols x,y,z,w;").unwrap();
            writeln!(out, "local F = (x+y+z+w)^{scale};").unwrap();
            writeln!(out, ".sort").unwrap();
            writeln!(out, "id x = {};", random_linear(&mut rng, &["y", "z", "w"])).unwrap();
            writeln!(
                out,
                "multiply {};",
                random_linear(&mut rng, &["x", "y", "z", "w"])
            )
            .unwrap();
            writeln!(out, ".sort").unwrap();
        }
        WorkloadKind::SubstituteChain => {
            let syms = ["a", "b", "c", "d"];
            writeln!(
                out,
                "* substitute-chain workload, scale {scale}, seed {seed}"
            )
            .unwrap();
            writeln!(out, "symbols a,b,c,d;").unwrap();
            writeln!(
                out,
                "local F = ({})^{};",
                random_linear(&mut rng, &syms),
                scale + 1
            )
            .unwrap();
            writeln!(out, "local G = {};", random_poly(&mut rng, &syms, 3)).unwrap();
            for _ in 0..scale + 1 {
                let target = syms.choose(&mut rng).unwrap();
                let nterms = rng.gen_range(1..=3);
                writeln!(
                    out,
                    "id {target} = {};",
                    random_poly(&mut rng, &syms, nterms)
                )
                .unwrap();
                if rng.gen_bool(0.5) {
                    let nterms = rng.gen_range(1..=2);
                    writeln!(out, "multiply {};", random_poly(&mut rng, &syms, nterms)).unwrap();
                }
                writeln!(out, ".sort").unwrap();
            }
        }
        WorkloadKind::MultiplyChain => {
            let syms = ["x", "y", "z", "w", "v"];
            writeln!(out, "* multiply-chain workload, scale {scale}, seed {seed}").unwrap();
            writeln!(out, "symbols {};", syms.join(",")).unwrap();
            writeln!(out, "local F = ({}+1)^{scale};", syms.join("+")).unwrap();
            for _ in 0..3 {
                writeln!(out, "multiply {};", random_linear(&mut rng, &syms)).unwrap();
                writeln!(out, ".sort").unwrap();
            }
        }
    }
    writeln!(out, ".end").unwrap();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    TwoProc,
    Sequential,
}

impl FromStr for Normalization {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "two-proc" => Ok(Normalization::TwoProc),
            "sequential" => Ok(Normalization::Sequential),
            other => Err(format!("unknown normalization `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Speedup {
    pub nslaves: usize,
    pub t_wall: Duration,
    /// `t_wall(1 slave) / t_wall(p)`.
    pub two_proc: Option<f64>,
    /// `t_sequential / t_wall(p)`.
    pub vs_sequential: Option<f64>,
}

impl Speedup {
    pub fn get(&self, n: Normalization) -> Option<f64> {
        match n {
            Normalization::TwoProc => self.two_proc,
            Normalization::Sequential => self.vs_sequential,
        }
    }
}

/// Normalizes wall times per slave count. The reference for the requested
/// normalization must be present; the other one is filled in when possible.
pub fn compute_speedups(
    timings: &BTreeMap<usize, Duration>,
    t_sequential: Option<Duration>,
    normalize: Normalization,
) -> Result<Vec<Speedup>, BenchError> {
    let two_proc_ref = timings.get(&1).copied();
    match normalize {
        Normalization::TwoProc if two_proc_ref.is_none() => {
            return Err(BenchError::MissingReference("no timing for 1 slave"))
        }
        Normalization::Sequential if t_sequential.is_none() => {
            return Err(BenchError::MissingReference("no sequential timing"))
        }
        _ => {}
    }
    let ratio = |num: Duration, den: Duration| num.as_secs_f64() / den.as_secs_f64();
    Ok(timings
        .iter()
        .map(|(&p, &t)| Speedup {
            nslaves: p,
            t_wall: t,
            two_proc: two_proc_ref.map(|r| ratio(r, t)),
            vs_sequential: t_sequential.map(|s| ratio(s, t)),
        })
        .collect())
}

pub fn median(values: &mut [Duration]) -> Duration {
    assert!(!values.is_empty(), "median of nothing");
    values.sort_unstable();
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2
    }
}

/// One configuration point of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepPoint {
    pub nslaves: usize,
    pub backend: Backend,
    pub chunk_size: usize,
    pub master_computes: bool,
}

/// Medians over the repeats of one sweep point, with whole-program metrics
/// summed over modules.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub point: SweepPoint,
    pub repeats: usize,
    pub t_wall: Duration,
    pub t_distribute: Duration,
    pub t_compute_max: Duration,
    pub t_local_sort_max: Duration,
    pub t_final_merge: Duration,
    /// Counts from the last repeat; they do not vary between repeats.
    pub counts: PhaseMetrics,
    pub stats: TransportStats,
    pub modules: Vec<ModuleResult>,
}

/// Medians for one module, summed over the local expressions.
#[derive(Debug, Clone, PartialEq)]
pub struct ModuleResult {
    pub module_index: usize,
    pub t_wall: Duration,
    pub t_distribute: Duration,
    pub t_compute_max: Duration,
    pub t_local_sort_max: Duration,
    pub t_final_merge: Duration,
    pub counts: PhaseMetrics,
    pub stats: TransportStats,
}

#[derive(Default)]
struct Samples {
    wall: Vec<Duration>,
    distribute: Vec<Duration>,
    compute: Vec<Duration>,
    sort: Vec<Duration>,
    merge: Vec<Duration>,
}

impl Samples {
    fn push(&mut self, m: &PhaseMetrics) {
        self.wall.push(m.t_wall);
        self.distribute.push(m.t_distribute);
        self.compute.push(m.t_compute_max);
        self.sort.push(m.t_local_sort_max);
        self.merge.push(m.t_final_merge);
    }
}

/// Runs `program` once as warm-up and then `repeats` times, returning the
/// per-phase medians.
pub fn measure(
    program: &Program,
    cfg: &RunConfig,
    repeats: usize,
) -> Result<SweepResult, BenchError> {
    let repeats = repeats.max(1);
    let nmodules = program.modules.len();
    run_program(program, cfg)?;
    let mut total = Samples::default();
    let mut per_module: Vec<Samples> = (0..nmodules).map(|_| Samples::default()).collect();
    let mut last = None;
    for _ in 0..repeats {
        let out = run_program(program, cfg)?;
        total.push(&out.total_metrics());
        for (mi, s) in per_module.iter_mut().enumerate() {
            s.push(&out.module_metrics(mi));
        }
        last = Some(out);
    }
    let last = last.expect("at least one repeat");
    let modules = per_module
        .into_iter()
        .enumerate()
        .map(|(mi, mut s)| ModuleResult {
            module_index: mi,
            t_wall: median(&mut s.wall),
            t_distribute: median(&mut s.distribute),
            t_compute_max: median(&mut s.compute),
            t_local_sort_max: median(&mut s.sort),
            t_final_merge: median(&mut s.merge),
            counts: last.module_metrics(mi),
            stats: last.module_stats(mi),
        })
        .collect();
    Ok(SweepResult {
        point: SweepPoint {
            nslaves: cfg.nslaves,
            backend: cfg.backend,
            chunk_size: cfg.chunk_size,
            master_computes: cfg.master_computes,
        },
        repeats,
        t_wall: median(&mut total.wall),
        t_distribute: median(&mut total.distribute),
        t_compute_max: median(&mut total.compute),
        t_local_sort_max: median(&mut total.sort),
        t_final_merge: median(&mut total.merge),
        counts: last.total_metrics(),
        stats: last.stats,
        modules,
    })
}

/// Cross product of slave counts, backends and chunk sizes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepPlan {
    pub slaves: Vec<usize>,
    pub backends: Vec<Backend>,
    pub chunks: Vec<usize>,
    pub master_computes: bool,
    pub repeats: usize,
}

impl SweepPlan {
    pub fn points(&self) -> Vec<SweepPoint> {
        let mut out = Vec::new();
        for &backend in &self.backends {
            for &chunk_size in &self.chunks {
                for &nslaves in &self.slaves {
                    out.push(SweepPoint {
                        nslaves,
                        backend,
                        chunk_size,
                        master_computes: self.master_computes,
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub results: Vec<SweepResult>,
    /// Median wall time of the sequential executor.
    pub t_sequential: Duration,
}

impl SweepReport {
    /// Speedups for one backend and chunk size.
    pub fn speedups(
        &self,
        backend: Backend,
        chunk_size: usize,
        normalize: Normalization,
    ) -> Result<Vec<Speedup>, BenchError> {
        let timings: BTreeMap<usize, Duration> = self
            .results
            .iter()
            .filter(|r| r.point.backend == backend && r.point.chunk_size == chunk_size)
            .map(|r| (r.point.nslaves, r.t_wall))
            .collect();
        compute_speedups(&timings, Some(self.t_sequential), normalize)
    }
}

pub fn sweep(program: &Program, plan: &SweepPlan) -> Result<SweepReport, BenchError> {
    let seq = measure(program, &RunConfig::sequential(), plan.repeats)?;
    let mut results = Vec::new();
    for point in plan.points() {
        let cfg = RunConfig {
            master_computes: point.master_computes,
            ..RunConfig::parallel(point.nslaves, point.chunk_size, point.backend)
        };
        results.push(measure(program, &cfg, plan.repeats)?);
    }
    Ok(SweepReport {
        results,
        t_sequential: seq.t_wall,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::run_program;
    use crate::parser::parse_program;

    fn secs(s: u64) -> Duration {
        Duration::from_secs(s)
    }

    #[test]
    fn two_proc_speedup_from_definition() {
        let t = BTreeMap::from([(1, secs(100)), (4, secs(25))]);
        let s = compute_speedups(&t, None, Normalization::TwoProc).unwrap();
        assert_eq!(s[1].two_proc, Some(4.0));
        assert_eq!(s[0].two_proc, Some(1.0));
        assert_eq!(s[1].vs_sequential, None);
    }

    #[test]
    fn sequential_speedup_identity() {
        let t = BTreeMap::from([(1, secs(100))]);
        let s = compute_speedups(&t, Some(secs(100)), Normalization::Sequential).unwrap();
        assert_eq!(s[0].vs_sequential, Some(1.0));
    }

    #[test]
    fn communication_loss_is_expressible() {
        // one slave 25% slower than the sequential program reads as 0.8
        let t = BTreeMap::from([(1, Duration::from_millis(125))]);
        let s = compute_speedups(
            &t,
            Some(Duration::from_millis(100)),
            Normalization::Sequential,
        )
        .unwrap();
        assert!((s[0].vs_sequential.unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn missing_reference_is_an_error() {
        let t = BTreeMap::from([(2, secs(10))]);
        assert!(matches!(
            compute_speedups(&t, Some(secs(3)), Normalization::TwoProc),
            Err(BenchError::MissingReference(_))
        ));
        assert!(matches!(
            compute_speedups(
                &BTreeMap::from([(1, secs(1))]),
                None,
                Normalization::Sequential
            ),
            Err(BenchError::MissingReference(_))
        ));
    }

    #[test]
    fn median_odd_and_even() {
        assert_eq!(median(&mut [secs(5), secs(1), secs(3)]), secs(3));
        assert_eq!(
            median(&mut [secs(4), secs(1), secs(3), secs(2)]),
            Duration::from_millis(2500)
        );
    }

    #[test]
    fn workloads_are_deterministic_and_parse() {
        for kind in [
            WorkloadKind::Expand,
            WorkloadKind::SubstituteChain,
            WorkloadKind::MultiplyChain,
        ] {
            for seed in 0..20 {
                let a = generate_workload(kind, 1 + (seed % 3) as u32, seed).unwrap();
                let b = generate_workload(kind, 1 + (seed % 3) as u32, seed).unwrap();
                assert_eq!(a, b);
                parse_program(&a).unwrap_or_else(|e| panic!("{e}\n{a}"));
            }
        }
        assert!(generate_workload(WorkloadKind::Expand, 0, 0).is_err());
    }

    #[test]
    fn seeds_change_the_program() {
        let a = generate_workload(WorkloadKind::SubstituteChain, 2, 1).unwrap();
        let b = generate_workload(WorkloadKind::SubstituteChain, 2, 2).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn expand_scale_two_first_module_has_ten_terms() {
        let p = parse_program(&generate_workload(WorkloadKind::Expand, 2, 7).unwrap()).unwrap();
        let out = run_program(&p, &RunConfig::sequential()).unwrap();
        assert_eq!(out.passes[0].metrics.terms_out, 10);
    }

    #[test]
    fn multiply_chain_term_counts() {
        // (5 symbols + 1)^2 has C(7,5) = 21 terms; each multiply has 6 terms
        let p =
            parse_program(&generate_workload(WorkloadKind::MultiplyChain, 2, 0).unwrap()).unwrap();
        assert_eq!(p.initial[0].1.len(), 21);
        let out = run_program(&p, &RunConfig::sequential()).unwrap();
        assert_eq!(out.passes.len(), 3);
        assert_eq!(out.passes[0].metrics.terms_generated, 21 * 6);
        assert_eq!(out.passes[0].metrics.terms_out, 56);
    }

    #[test]
    fn workload_spec_parsing() {
        let s: WorkloadSpec = "expand:3:42".parse().unwrap();
        assert_eq!(
            s,
            WorkloadSpec {
                kind: WorkloadKind::Expand,
                scale: 3,
                seed: 42
            }
        );
        assert_eq!(s.name(), "expand:3:42");
        assert!("expand:3".parse::<WorkloadSpec>().is_err());
        assert!("nope:1:1".parse::<WorkloadSpec>().is_err());
        let m: WorkloadSpec = "multiply-chain:2:0".parse().unwrap();
        assert_eq!(m.name(), "multiply-chain:2:0");
        assert!("expand:1:1:1".parse::<WorkloadSpec>().is_err());
    }

    #[test]
    fn sweep_produces_one_result_per_point() {
        let p = parse_program(&generate_workload(WorkloadKind::Expand, 2, 0).unwrap()).unwrap();
        let plan = SweepPlan {
            slaves: vec![1, 2],
            backends: vec![Backend::MessagePassing, Backend::SharedBuffer],
            chunks: vec![3],
            master_computes: false,
            repeats: 2,
        };
        let report = sweep(&p, &plan).unwrap();
        assert_eq!(report.results.len(), 4);
        let s = report
            .speedups(Backend::SharedBuffer, 3, Normalization::TwoProc)
            .unwrap();
        assert_eq!(s.len(), 2);
        assert!(s.iter().all(|x| x.vs_sequential.is_some()));
    }

    #[test]
    fn module_results_add_up_to_the_program() {
        let p = parse_program(&generate_workload(WorkloadKind::Expand, 2, 0).unwrap()).unwrap();
        let r = measure(&p, &RunConfig::parallel(2, 3, Backend::MessagePassing), 1).unwrap();
        assert_eq!(r.modules.len(), 2);
        let mut stats = TransportStats::default();
        let mut generated = 0;
        for m in &r.modules {
            stats.accumulate(&m.stats);
            generated += m.counts.terms_generated;
        }
        assert_eq!(generated, r.counts.terms_generated);
        // the two shutdown messages belong to no module
        assert_eq!(stats.messages() + 2, r.stats.messages());
        assert_eq!(stats.serialized_bytes + 8, r.stats.serialized_bytes);
    }
}
