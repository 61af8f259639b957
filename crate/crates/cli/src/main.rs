use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use parterm_core::bench::{sweep, Normalization, SweepPlan, SweepReport, WorkloadSpec};
use parterm_core::engine::{run_program, RunConfig, DEFAULT_CHUNK_SIZE};
use parterm_core::parser::{format_expression, parse_program, Program};
use parterm_core::transport::Backend;

#[derive(Parser)]
#[command(name = "parterm", version, about = "Parallel term rewriting engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a program and print its final expressions.
    Run(RunArgs),
    /// Time a program over a grid of slave counts, backends and chunk sizes.
    Bench(BenchArgs),
    /// Check that every parallel configuration reproduces the sequential result.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct RunArgs {
    file: PathBuf,
    /// Number of slaves; 0 runs the sequential executor.
    #[arg(long, default_value_t = 1)]
    slaves: usize,
    #[arg(long, default_value = "sm", value_parser = parse_backend)]
    backend: Backend,
    #[arg(long, default_value_t = DEFAULT_CHUNK_SIZE)]
    chunk: usize,
    /// Let the master process chunks while it waits.
    #[arg(long)]
    master_computes: bool,
    /// Write the expressions here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(required_unless_present = "generate", conflicts_with = "generate")]
    file: Option<PathBuf>,
    /// Generated workload, `kind:scale:seed` with kind `expand` or `substitute-chain`.
    #[arg(long)]
    generate: Option<WorkloadSpec>,
    #[arg(long, required = true, value_delimiter = ',')]
    slaves: Vec<usize>,
    #[arg(long, required = true, value_delimiter = ',', value_parser = parse_backend)]
    backend: Vec<Backend>,
    #[arg(long, value_delimiter = ',', default_values_t = [DEFAULT_CHUNK_SIZE])]
    chunk: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    repeat: usize,
    #[arg(long, default_value = "two-proc")]
    normalize: Normalization,
    #[arg(long)]
    master_computes: bool,
    #[arg(long)]
    csv: PathBuf,
    /// Speedup table for gnuplot; defaults to the CSV path with a `.dat` extension.
    #[arg(long)]
    dat: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    file: PathBuf,
    #[arg(long, required = true, value_delimiter = ',')]
    slaves: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 7, DEFAULT_CHUNK_SIZE])]
    chunk: Vec<usize>,
}

fn parse_backend(s: &str) -> Result<Backend, String> {
    Backend::from_short_name(s).ok_or_else(|| format!("unknown backend `{s}` (expected mp or sm)"))
}

enum Failure {
    Usage(anyhow::Error),
    Parse(anyhow::Error),
    Mismatch(String),
    Runtime(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Parse(_) => 2,
            Failure::Mismatch(_) => 3,
            Failure::Runtime(_) => 4,
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Usage(e) | Failure::Parse(e) | Failure::Runtime(e) => {
                    eprintln!("parterm: {e:#}")
                }
                Failure::Mismatch(m) => eprintln!("parterm: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}

fn load(path: &Path) -> Result<Program, Failure> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    parse_program(&text).map_err(|e| Failure::Parse(anyhow!("{}: {e}", path.display())))
}

fn cmd_run(a: RunArgs) -> Result<(), Failure> {
    let program = load(&a.file)?;
    let cfg = RunConfig {
        master_computes: a.master_computes,
        ..RunConfig::parallel(a.slaves, a.chunk, a.backend)
    };
    let out = run_program(&program, &cfg).map_err(|e| Failure::Runtime(e.into()))?;
    let mut text = String::new();
    for (name, e) in &out.expressions {
        writeln!(text, "{name} = {}", format_expression(e, &program.symtab)).unwrap();
    }
    match a.out {
        Some(path) => {
            fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_verify(a: VerifyArgs) -> Result<(), Failure> {
    if a.slaves.contains(&0) || a.chunk.contains(&0) {
        return Err(Failure::Usage(anyhow!(
            "--slaves and --chunk values must be at least 1"
        )));
    }
    let program = load(&a.file)?;
    let reference =
        run_program(&program, &RunConfig::sequential()).map_err(|e| Failure::Runtime(e.into()))?;
    let mut checked = 0;
    for &nslaves in &a.slaves {
        for &chunk in &a.chunk {
            for backend in [Backend::MessagePassing, Backend::SharedBuffer] {
                for master_computes in [false, true] {
                    let cfg = RunConfig {
                        master_computes,
                        ..RunConfig::parallel(nslaves, chunk, backend)
                    };
                    let out =
                        run_program(&program, &cfg).map_err(|e| Failure::Runtime(e.into()))?;
                    if out.expressions != reference.expressions {
                        return Err(Failure::Mismatch(format!(
                            "mismatch with {nslaves} slaves, chunk {chunk}, backend {}, master_computes {master_computes}",
                            backend.short_name()
                        )));
                    }
                    checked += 1;
                }
            }
        }
    }
    println!(
        "ok: {checked} configurations (slaves {:?} x chunk {:?} x backend mp,sm x master_computes false,true) match the sequential result",
        a.slaves, a.chunk
    );
    Ok(())
}

#[derive(Serialize)]
struct CsvRow<'a> {
    program: &'a str,
    module_index: usize,
    nslaves: usize,
    backend: &'static str,
    chunk_size: usize,
    master_computes: bool,
    repeat: usize,
    t_wall_ns: u128,
    t_distribute_ns: u128,
    t_compute_max_ns: u128,
    t_local_sort_max_ns: u128,
    t_final_merge_ns: u128,
    terms_in: u64,
    terms_generated: u64,
    terms_out: u64,
    messages: u64,
    serialized_bytes: u64,
    handle_transfers: u64,
}

fn cmd_bench(a: BenchArgs) -> Result<(), Failure> {
    if a.slaves.contains(&0) {
        return Err(Failure::Usage(anyhow!(
            "--slaves values must be at least 1"
        )));
    }
    if a.chunk.contains(&0) {
        return Err(Failure::Usage(anyhow!("--chunk values must be at least 1")));
    }
    if a.normalize == Normalization::TwoProc && !a.slaves.contains(&1) {
        return Err(Failure::Usage(anyhow!(
            "two-proc normalization needs 1 in --slaves"
        )));
    }
    let (name, program) = match (&a.file, &a.generate) {
        (Some(path), _) => {
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            (stem, load(path)?)
        }
        (None, Some(spec)) => {
            let text = spec.generate().map_err(|e| Failure::Usage(e.into()))?;
            let program = parse_program(&text)
                .map_err(|e| Failure::Parse(anyhow!("{}: {e}", spec.name())))?;
            (spec.name(), program)
        }
        (None, None) => unreachable!("clap requires a file or --generate"),
    };

    let plan = SweepPlan {
        slaves: a.slaves.clone(),
        backends: a.backend.clone(),
        chunks: a.chunk.clone(),
        master_computes: a.master_computes,
        repeats: a.repeat,
    };
    let report = sweep(&program, &plan).map_err(|e| Failure::Runtime(e.into()))?;

    write_csv(&a.csv, &name, &report)?;
    let dat = a.dat.clone().unwrap_or_else(|| a.csv.with_extension("dat"));
    let table = speedup_table(&report, &plan)?;
    fs::write(&dat, &table).with_context(|| format!("cannot write {}", dat.display()))?;

    println!(
        "sequential: {:.3} ms",
        report.t_sequential.as_secs_f64() * 1e3
    );
    for &backend in &plan.backends {
        for &chunk in &plan.chunks {
            let speedups = report
                .speedups(backend, chunk, a.normalize)
                .map_err(|e| Failure::Runtime(e.into()))?;
            for s in speedups {
                println!(
                    "{} chunk {chunk} slaves {}: {:.3} ms, speedup {:.2}",
                    backend.short_name(),
                    s.nslaves,
                    s.t_wall.as_secs_f64() * 1e3,
                    s.get(a.normalize).unwrap_or(f64::NAN)
                );
            }
        }
    }
    println!("wrote {} and {}", a.csv.display(), dat.display());
    Ok(())
}

fn write_csv(path: &Path, program: &str, report: &SweepReport) -> Result<(), Failure> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    for r in &report.results {
        for m in &r.modules {
            w.serialize(CsvRow {
                program,
                module_index: m.module_index,
                nslaves: r.point.nslaves,
                backend: r.point.backend.short_name(),
                chunk_size: r.point.chunk_size,
                master_computes: r.point.master_computes,
                repeat: r.repeats,
                t_wall_ns: m.t_wall.as_nanos(),
                t_distribute_ns: m.t_distribute.as_nanos(),
                t_compute_max_ns: m.t_compute_max.as_nanos(),
                t_local_sort_max_ns: m.t_local_sort_max.as_nanos(),
                t_final_merge_ns: m.t_final_merge.as_nanos(),
                terms_in: m.counts.terms_in,
                terms_generated: m.counts.terms_generated,
                terms_out: m.counts.terms_out,
                messages: m.stats.messages(),
                serialized_bytes: m.stats.serialized_bytes,
                handle_transfers: m.stats.handle_transfers,
            })
            .context("csv")?;
        }
    }
    w.flush().context("csv")?;
    Ok(())
}

/// One gnuplot data block per backend and chunk size, separated by two
/// blank lines so `index` selects them. The first line of each block is a
/// column header usable with `set key autotitle columnheader`.
fn speedup_table(report: &SweepReport, plan: &SweepPlan) -> Result<String, Failure> {
    let mut out = String::new();
    for &backend in &plan.backends {
        for &chunk in &plan.chunks {
            let mut speedups = report
                .speedups(backend, chunk, Normalization::Sequential)
                .map_err(|e| Failure::Runtime(e.into()))?;
            speedups.sort_by_key(|s| s.nslaves);
            if !out.is_empty() {
                out.push_str("\n\n");
            }
            writeln!(
                out,
                "{}/chunk={chunk} t_wall_s speedup_two_proc speedup_sequential merge_share",
                backend.short_name()
            )
            .unwrap();
            for s in speedups {
                let r = report
                    .results
                    .iter()
                    .find(|r| {
                        r.point.backend == backend
                            && r.point.chunk_size == chunk
                            && r.point.nslaves == s.nslaves
                    })
                    .ok_or_else(|| Failure::Runtime(anyhow!("missing sweep point")))?;
                let share = r.t_final_merge.as_secs_f64() / r.t_wall.as_secs_f64();
                writeln!(
                    out,
                    "{} {:.9} {} {} {:.6}",
                    s.nslaves,
                    s.t_wall.as_secs_f64(),
                    fmt_opt(s.two_proc),
                    fmt_opt(s.vs_sequential),
                    share
                )
                .unwrap();
            }
        }
    }
    Ok(out)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NaN".to_string(), |v| format!("{v:.6}"))
}
