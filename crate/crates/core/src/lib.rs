//! A small parallel symbolic engine in the master/slave style.
//!
//! Programs in a tiny FORM-like language are parsed into local expressions
//! and a list of modules. Each module is a pipeline of per-term rewrite
//! statements ending in a sort. The parallel executor hands chunks of terms
//! to slave threads, which rewrite and pre-sort them; the master merges the
//! slaves' sorted runs into the module's result.
//!
//! ```
//! use parterm_core::{parse_program, run_program, format_expression, RunConfig};
//! use parterm_core::transport::Backend;
//!
//! let p = parse_program("symbols x,y; local F = x+y; multiply x-y; .sort .end").unwrap();
//! let out = run_program(&p, &RunConfig::parallel(2, 1, Backend::SharedBuffer)).unwrap();
//! assert_eq!(format_expression(out.get("F").unwrap(), &p.symtab), "x^2-y^2");
//! ```

pub mod bench;
pub mod engine;
pub mod merge;
pub mod parser;
pub mod rewrite;
pub mod term;
pub mod transport;
pub mod wire;

pub use engine::{
    execute_parallel, execute_sequential, run_program, EngineError, PhaseMetrics, ProgramOutput,
    RunConfig,
};
pub use merge::{build_run, merge_runs, SortedRun, WorkerId};
pub use parser::{format_expression, parse_program, Module, ParseError, Program, Statement};
pub use rewrite::{apply_module_to_term, apply_statement};
pub use term::{normalize, Expression, Monomial, SymbolId, SymbolTable, Term};
pub use transport::{Backend, TransportStats};
