//! Worker-side run building and the master's k-way merge.
//!
//! Runs are merged with a binary heap over run heads. Equal monomials at the
//! heads are drained in the same step and their coefficients summed, so
//! cross-run combination happens in a single pass.

use std::cell::Cell;
use std::cmp::Ordering;
use std::collections::binary_heap::PeekMut;
use std::collections::BinaryHeap;

use num_traits::Zero;

use crate::term::{normalize, Expression, Term};

/// Identifies the producer of a run. The master uses [`WorkerId::MASTER`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WorkerId(pub u32);

impl WorkerId {
    pub const MASTER: WorkerId = WorkerId(u32::MAX);

    pub fn is_master(self) -> bool {
        self == Self::MASTER
    }
}

/// A locally sorted, like-term-merged stream awaiting the final merge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SortedRun {
    pub terms: Expression,
    pub producer: WorkerId,
}

impl SortedRun {
    pub fn empty(producer: WorkerId) -> Self {
        SortedRun {
            terms: Expression::zero(),
            producer,
        }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_zero()
    }
}

pub fn build_run(batch: Vec<Term>, worker: WorkerId) -> SortedRun {
    SortedRun {
        terms: normalize(batch),
        producer: worker,
    }
}

/// Merges runs into one expression.
pub fn merge_runs(runs: Vec<SortedRun>) -> Expression {
    merge_inner(runs.into_iter().map(|r| r.terms), None)
}

/// As [`merge_runs`], also returning the number of monomial comparisons made.
pub fn merge_runs_counted(runs: Vec<SortedRun>) -> (Expression, u64) {
    let counter = Cell::new(0);
    let e = merge_inner(runs.into_iter().map(|r| r.terms), Some(&counter));
    (e, counter.get())
}

/// Merges sorted expressions directly, e.g. a worker folding per-chunk runs.
pub fn merge_expressions(parts: Vec<Expression>) -> Expression {
    merge_inner(parts.into_iter(), None)
}

struct Head<'c> {
    term: Term,
    source: usize,
    counter: Option<&'c Cell<u64>>,
}

impl Head<'_> {
    fn tick(&self) {
        if let Some(c) = self.counter {
            c.set(c.get() + 1);
        }
    }
}

impl PartialEq for Head<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Head<'_> {}

impl PartialOrd for Head<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Head<'_> {
    // BinaryHeap is a max-heap; the earliest monomial must compare greatest.
    fn cmp(&self, other: &Self) -> Ordering {
        self.tick();
        other.term.mono.cmp(&self.term.mono)
    }
}

fn merge_inner<I>(parts: I, counter: Option<&Cell<u64>>) -> Expression
where
    I: Iterator<Item = Expression>,
{
    let mut sources: Vec<std::vec::IntoIter<Term>> = parts
        .filter(|e| !e.is_zero())
        .map(|e| e.into_terms().into_iter())
        .collect();
    match sources.len() {
        0 => return Expression::zero(),
        1 => return Expression::from_sorted_unchecked(sources.pop().unwrap().collect()),
        _ => {}
    }

    let total: usize = sources.iter().map(|s| s.len()).sum();
    let mut heap = BinaryHeap::with_capacity(sources.len());
    for (source, it) in sources.iter_mut().enumerate() {
        let term = it.next().expect("empty sources filtered");
        heap.push(Head {
            term,
            source,
            counter,
        });
    }

    let mut out: Vec<Term> = Vec::with_capacity(total);
    while let Some(mut top) = heap.peek_mut() {
        let next = sources[top.source].next();
        let term = match next {
            Some(t) => std::mem::replace(&mut top.term, t),
            None => PeekMut::pop(top).term,
        };
        let same = match out.last() {
            Some(last) => {
                if let Some(c) = counter {
                    c.set(c.get() + 1);
                }
                last.mono == term.mono
            }
            None => false,
        };
        if same {
            out.last_mut().unwrap().coeff += term.coeff;
        } else {
            if out.last().is_some_and(|t| t.coeff.is_zero()) {
                out.pop();
            }
            out.push(term);
        }
    }
    if out.last().is_some_and(|t| t.coeff.is_zero()) {
        out.pop();
    }
    Expression::from_sorted_unchecked(out)
}
