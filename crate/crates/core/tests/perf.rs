//! Soft timing checks. Ignored by default; run with
//! `cargo test -p parterm-core --test perf -- --ignored` on an otherwise idle
//! machine with more cores than slaves.

use parterm_core::bench::{generate_workload, WorkloadKind};
use parterm_core::engine::{run_program, RunConfig};
use parterm_core::parser::parse_program;
use parterm_core::transport::Backend;

#[test]
#[ignore]
fn master_is_mostly_idle_without_master_computes() {
    let p = parse_program(&generate_workload(WorkloadKind::MultiplyChain, 16, 0).unwrap()).unwrap();
    for backend in [Backend::MessagePassing, Backend::SharedBuffer] {
        let out = run_program(&p, &RunConfig::parallel(2, 1000, backend)).unwrap();
        let m = out.total_metrics();
        let share = m.master_other_busy().as_secs_f64() / m.t_wall.as_secs_f64();
        assert!(
            share < 0.05,
            "{}: master busy outside distribute/merge for {share:.3} of wall time",
            backend.short_name()
        );
    }
}
