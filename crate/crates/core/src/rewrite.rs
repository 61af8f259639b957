//! Per-term application of a module's statements.
//!
//! Every term of an expression is rewritten independently of the others, and
//! nothing is sorted until the module boundary. This is what lets the engine
//! hand out terms to workers in arbitrary chunks.

use std::collections::HashMap;

use crate::parser::{Module, Statement};
use crate::term::{pow_expression, Expression, SymbolId, Term};

/// Unsorted output of rewriting one input chunk.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GeneratedBatch {
    pub terms: Vec<Term>,
    pub source_chunk: u64,
}

/// Applies one statement to one term. The result is not normalized.
pub fn apply_statement(t: &Term, s: &Statement) -> Vec<Term> {
    let mut out = Vec::new();
    apply_into(t, s, &mut PowerCache::default(), 0, &mut out);
    out
}

/// Feeds `t` through the module's statements in order and returns the
/// flattened multiset of generated terms.
pub fn apply_module_to_term(t: &Term, m: &Module) -> Vec<Term> {
    Rewriter::new(m).apply(t)
}

/// Memoized powers of `id` right-hand sides, keyed by (statement, exponent).
#[derive(Debug, Default)]
struct PowerCache {
    powers: HashMap<(usize, u32), Expression>,
}

impl PowerCache {
    fn get(&mut self, stmt: usize, rhs: &Expression, n: u32) -> &Expression {
        self.powers
            .entry((stmt, n))
            .or_insert_with(|| pow_expression(rhs, n))
    }
}

fn apply_into(t: &Term, s: &Statement, cache: &mut PowerCache, index: usize, out: &mut Vec<Term>) {
    match s {
        Statement::IdSubst { target, rhs } => substitute(t, *target, rhs, cache, index, out),
        Statement::Multiply { factor } => out.extend(factor.terms().iter().map(|f| t.mul(f))),
    }
}

fn substitute(
    t: &Term,
    target: SymbolId,
    rhs: &Expression,
    cache: &mut PowerCache,
    index: usize,
    out: &mut Vec<Term>,
) {
    let (rest_mono, n) = t.mono.split_off(target);
    if n == 0 {
        out.push(t.clone());
        return;
    }
    let rest = Term {
        coeff: t.coeff.clone(),
        mono: rest_mono,
    };
    out.extend(cache.get(index, rhs, n).terms().iter().map(|p| rest.mul(p)));
}

/// Reusable per-worker rewriter for one module. Keeps a cache of
/// substitution powers so repeated exponents are expanded once.
#[derive(Debug)]
pub struct Rewriter<'m> {
    module: &'m Module,
    cache: PowerCache,
}

impl<'m> Rewriter<'m> {
    pub fn new(module: &'m Module) -> Self {
        Rewriter {
            module,
            cache: PowerCache::default(),
        }
    }

    pub fn apply(&mut self, t: &Term) -> Vec<Term> {
        let mut out = Vec::new();
        self.apply_into(t, &mut out);
        out
    }

    /// Appends the terms generated from `t` to `out`.
    pub fn apply_into(&mut self, t: &Term, out: &mut Vec<Term>) {
        let statements = &self.module.statements;
        if statements.is_empty() {
            out.push(t.clone());
            return;
        }
        let mut current = vec![t.clone()];
        let mut next = Vec::new();
        for (i, s) in statements.iter().enumerate() {
            let last = i + 1 == statements.len();
            let sink = if last { &mut *out } else { &mut next };
            for term in &current {
                apply_into(term, s, &mut self.cache, i, sink);
            }
            if !last {
                std::mem::swap(&mut current, &mut next);
                next.clear();
            }
        }
    }

    /// Rewrites every term of a chunk into one batch.
    pub fn apply_chunk(&mut self, chunk: &[Term], seq: u64) -> GeneratedBatch {
        let mut terms = Vec::with_capacity(chunk.len());
        for t in chunk {
            self.apply_into(t, &mut terms);
        }
        GeneratedBatch {
            terms,
            source_chunk: seq,
        }
    }
}
