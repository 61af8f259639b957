//! Strategies and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::cmp::Reverse;
use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_traits::Zero;
use proptest::prelude::*;

use parterm_core::parser::{Module, Statement};
use parterm_core::term::{Expression, Monomial, SymbolId, SymbolTable, Term};

pub const NAMES: [&str; 4] = ["a", "b", "c", "d"];
pub const NSYMBOLS: usize = NAMES.len();

pub fn symtab() -> SymbolTable {
    let mut st = SymbolTable::new();
    for n in NAMES {
        st.declare(n).unwrap();
    }
    st
}

pub fn header() -> String {
    format!("symbols {};", NAMES.join(","))
}

pub fn monomial(max_exp: u32) -> impl Strategy<Value = Monomial> {
    prop::collection::vec(0..=max_exp, NSYMBOLS).prop_map(|exps| {
        Monomial::from_factors(
            exps.into_iter()
                .enumerate()
                .map(|(i, e)| (SymbolId(i as u32), e))
                .collect(),
        )
    })
}

pub fn coeff() -> impl Strategy<Value = BigInt> {
    prop_oneof![
        8 => (-9i64..=9).prop_map(BigInt::from),
        1 => any::<i64>().prop_map(BigInt::from),
        1 => (any::<i128>(), any::<i64>()).prop_map(|(a, b)| BigInt::from(a) * BigInt::from(b)),
    ]
}

pub fn raw_term(max_exp: u32) -> impl Strategy<Value = Term> {
    (coeff(), monomial(max_exp)).prop_map(|(c, m)| Term { coeff: c, mono: m })
}

pub fn raw_terms(max_len: usize, max_exp: u32) -> impl Strategy<Value = Vec<Term>> {
    prop::collection::vec(raw_term(max_exp), 0..=max_len)
}

pub fn expression(max_len: usize, max_exp: u32) -> impl Strategy<Value = Expression> {
    raw_terms(max_len, max_exp).prop_map(parterm_core::normalize)
}

/// Small-coefficient expression, used where terms get multiplied a lot.
pub fn small_expression(max_len: usize, max_exp: u32) -> impl Strategy<Value = Expression> {
    prop::collection::vec(((-3i64..=3), monomial(max_exp)), 0..=max_len).prop_map(|v| {
        parterm_core::normalize(v.into_iter().map(|(c, m)| Term::new(c, m)).collect())
    })
}

pub fn statement() -> impl Strategy<Value = Statement> {
    prop_oneof![
        (0..NSYMBOLS as u32, small_expression(3, 1)).prop_map(|(s, rhs)| Statement::IdSubst {
            target: SymbolId(s),
            rhs,
        }),
        small_expression(3, 1).prop_map(|factor| Statement::Multiply { factor }),
    ]
}

pub fn module() -> impl Strategy<Value = Module> {
    prop::collection::vec(statement(), 0..=3).prop_map(|statements| Module { statements })
}

/// Normalization oracle: dense exponent vectors in a map ordered so that
/// the lexicographically greatest vector comes first. Shares no code with
/// the production sorter or the sparse comparator.
pub fn oracle_normalize(raw: &[Term], nsymbols: usize) -> Vec<(Vec<u32>, BigInt)> {
    let mut acc: BTreeMap<Reverse<Vec<u32>>, BigInt> = BTreeMap::new();
    for t in raw {
        let mut dense = vec![0u32; nsymbols];
        for &(id, e) in t.mono.factors() {
            dense[id.0 as usize] += e;
        }
        *acc.entry(Reverse(dense)).or_insert_with(BigInt::zero) += &t.coeff;
    }
    acc.into_iter()
        .filter(|(_, c)| !c.is_zero())
        .map(|(Reverse(v), c)| (v, c))
        .collect()
}

pub fn dense_form(e: &Expression, nsymbols: usize) -> Vec<(Vec<u32>, BigInt)> {
    e.terms()
        .iter()
        .map(|t| (t.mono.dense(nsymbols), t.coeff.clone()))
        .collect()
}

/// Expression algebra evaluation of a module on a whole expression:
/// substitute or multiply the entire intermediate expression at once.
pub fn oracle_module(e: &Expression, m: &Module) -> Expression {
    let mut cur = e.clone();
    for s in &m.statements {
        cur = match s {
            Statement::Multiply { factor } => cur.mul(factor),
            Statement::IdSubst { target, rhs } => {
                let mut acc = Expression::zero();
                for t in cur.terms() {
                    let (rest, n) = t.mono.split_off(*target);
                    let rest = Expression::from_term(Term {
                        coeff: t.coeff.clone(),
                        mono: rest,
                    });
                    acc = acc.add(&rest.mul(&rhs.pow(n)));
                }
                acc
            }
        };
    }
    cur
}

/// Brute-force expansion of `(sum of nvars symbols)^n`: enumerates every
/// ordered word of length `n` and counts exponent tuples.
pub fn brute_force_power(nvars: usize, n: u32) -> BTreeMap<Vec<u32>, u64> {
    let mut out = BTreeMap::new();
    let total = (nvars as u64).pow(n);
    for word in 0..total {
        let mut exps = vec![0u32; nvars];
        let mut w = word;
        for _ in 0..n {
            exps[(w % nvars as u64) as usize] += 1;
            w /= nvars as u64;
        }
        *out.entry(exps).or_insert(0) += 1;
    }
    out
}

pub fn binomial(n: u64, k: u64) -> u64 {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

/// Seeded random raw terms over [`NSYMBOLS`] symbols, for the tests that
/// need an exact number of samples rather than shrinking.
pub fn random_terms(rng: &mut impl rand::Rng, len: usize, max_exp: u32) -> Vec<Term> {
    (0..len)
        .map(|_| {
            let coeff = if rng.gen_bool(0.1) {
                BigInt::from(rng.gen::<i64>()) * BigInt::from(rng.gen::<i64>())
            } else {
                BigInt::from(rng.gen_range(-9i64..=9))
            };
            let mono = Monomial::from_factors(
                (0..NSYMBOLS)
                    .map(|i| (SymbolId(i as u32), rng.gen_range(0..=max_exp)))
                    .collect(),
            );
            Term { coeff, mono }
        })
        .collect()
}
