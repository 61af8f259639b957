//! Terms, monomials and normalized expressions.
//!
//! A [`Term`] is an arbitrary-precision integer coefficient times a sparse
//! [`Monomial`]. An [`Expression`] is a sorted, like-term-merged sequence of
//! terms with no zero coefficients.
//!
//! Monomials are ordered by descending lexicographic comparison of their dense
//! exponent vectors: the monomial with the higher power of the first symbol
//! comes first, `x^2*y` before `x*y^2`, and `x` before the unit monomial.

use std::cmp::Ordering;
use std::collections::HashMap;

use num_bigint::BigInt;
use num_traits::Zero;
use thiserror::Error;

pub type Coeff = BigInt;

/// Dense symbol index, assigned in declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SymbolId(pub u32);

impl SymbolId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TermError {
    #[error("undeclared symbol `{0}`")]
    UndeclaredSymbol(String),
    #[error("symbol `{0}` declared twice")]
    DuplicateSymbol(String),
    #[error("symbol id {id} out of range for a table of {nsymbols} symbols")]
    SymbolOutOfRange { id: u32, nsymbols: usize },
    #[error("invalid monomial: {0}")]
    InvalidMonomial(&'static str),
}

/// Bijection between symbol names and dense ids `0..len`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SymbolTable {
    names: Vec<String>,
    ids: HashMap<String, SymbolId>,
}

impl SymbolTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn declare(&mut self, name: &str) -> Result<SymbolId, TermError> {
        if self.ids.contains_key(name) {
            return Err(TermError::DuplicateSymbol(name.to_string()));
        }
        let id = SymbolId(self.names.len() as u32);
        self.names.push(name.to_string());
        self.ids.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn lookup(&self, name: &str) -> Result<SymbolId, TermError> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| TermError::UndeclaredSymbol(name.to_string()))
    }

    pub fn name(&self, id: SymbolId) -> Option<&str> {
        self.names.get(id.index()).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }
}

/// Product of symbol powers in canonical sparse form: factors strictly
/// increasing by symbol id, every exponent at least one.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Monomial {
    factors: Vec<(SymbolId, u32)>,
}

impl Monomial {
    pub fn unit() -> Self {
        Monomial {
            factors: Vec::new(),
        }
    }

    pub fn var(id: SymbolId, exponent: u32) -> Self {
        if exponent == 0 {
            return Self::unit();
        }
        Monomial {
            factors: vec![(id, exponent)],
        }
    }

    /// Builds a monomial from factors in any order; repeated symbols have
    /// their exponents added and zero exponents are dropped.
    pub fn from_factors(mut factors: Vec<(SymbolId, u32)>) -> Self {
        factors.sort_unstable_by_key(|&(id, _)| id);
        let mut out: Vec<(SymbolId, u32)> = Vec::with_capacity(factors.len());
        for (id, e) in factors {
            if e == 0 {
                continue;
            }
            match out.last_mut() {
                Some((last, acc)) if *last == id => *acc += e,
                _ => out.push((id, e)),
            }
        }
        Monomial { factors: out }
    }

    /// Accepts factors that are already canonical, rejecting anything else.
    pub fn try_from_canonical(factors: Vec<(SymbolId, u32)>) -> Result<Self, TermError> {
        if factors.iter().any(|&(_, e)| e == 0) {
            return Err(TermError::InvalidMonomial("zero exponent"));
        }
        if factors.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(TermError::InvalidMonomial(
                "symbol ids not strictly increasing",
            ));
        }
        Ok(Monomial { factors })
    }

    pub fn factors(&self) -> &[(SymbolId, u32)] {
        &self.factors
    }

    pub fn is_unit(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn degree(&self) -> u64 {
        self.factors.iter().map(|&(_, e)| e as u64).sum()
    }

    pub fn exponent_of(&self, id: SymbolId) -> u32 {
        self.factors
            .binary_search_by_key(&id, |&(s, _)| s)
            .map(|i| self.factors[i].1)
            .unwrap_or(0)
    }

    /// Splits off the power of `id`, returning the remaining monomial and the
    /// removed exponent (zero when `id` is absent).
    pub fn split_off(&self, id: SymbolId) -> (Monomial, u32) {
        match self.factors.binary_search_by_key(&id, |&(s, _)| s) {
            Ok(i) => {
                let mut rest = self.factors.clone();
                let (_, e) = rest.remove(i);
                (Monomial { factors: rest }, e)
            }
            Err(_) => (self.clone(), 0),
        }
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        let (a, b) = (&self.factors, &other.factors);
        let mut out = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                Ordering::Less => {
                    out.push(a[i]);
                    i += 1;
                }
                Ordering::Greater => {
                    out.push(b[j]);
                    j += 1;
                }
                Ordering::Equal => {
                    out.push((a[i].0, a[i].1 + b[j].1));
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        Monomial { factors: out }
    }

    pub fn max_symbol(&self) -> Option<SymbolId> {
        self.factors.last().map(|&(id, _)| id)
    }

    /// Dense exponent vector of length `nsymbols`.
    pub fn dense(&self, nsymbols: usize) -> Vec<u32> {
        let mut v = vec![0; nsymbols];
        for &(id, e) in &self.factors {
            v[id.index()] = e;
        }
        v
    }
}

impl Ord for Monomial {
    /// `Less` means "sorts earlier": the larger dense exponent vector wins.
    fn cmp(&self, other: &Self) -> Ordering {
        let (a, b) = (&self.factors, &other.factors);
        let mut i = 0;
        loop {
            match (a.get(i), b.get(i)) {
                (None, None) => return Ordering::Equal,
                // the other side still has a positive exponent at some id
                (None, Some(_)) => return Ordering::Greater,
                (Some(_), None) => return Ordering::Less,
                (Some(&(ia, ea)), Some(&(ib, eb))) => {
                    if ia != ib {
                        // a smaller id means a nonzero entry where the other is zero
                        return ia.cmp(&ib);
                    }
                    if ea != eb {
                        return eb.cmp(&ea);
                    }
                }
            }
            i += 1;
        }
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Canonical monomial order with the symbol range checked.
pub fn compare_monomials(
    a: &Monomial,
    b: &Monomial,
    nsymbols: usize,
) -> Result<Ordering, TermError> {
    for m in [a, b] {
        if let Some(id) = m.max_symbol() {
            if id.index() >= nsymbols {
                return Err(TermError::SymbolOutOfRange { id: id.0, nsymbols });
            }
        }
    }
    Ok(a.cmp(b))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Term {
    pub coeff: Coeff,
    pub mono: Monomial,
}

impl Term {
    pub fn new(coeff: impl Into<Coeff>, mono: Monomial) -> Self {
        Term {
            coeff: coeff.into(),
            mono,
        }
    }

    pub fn constant(coeff: impl Into<Coeff>) -> Self {
        Term::new(coeff, Monomial::unit())
    }

    pub fn mul(&self, other: &Term) -> Term {
        Term {
            coeff: &self.coeff * &other.coeff,
            mono: self.mono.mul(&other.mono),
        }
    }
}

pub fn multiply_terms(a: &Term, b: &Term) -> Term {
    a.mul(b)
}

/// Normalized polynomial: terms strictly ordered by [`Monomial`]'s order with
/// nonzero coefficients. The zero expression has no terms.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Expression {
    terms: Vec<Term>,
}

impl Expression {
    pub fn zero() -> Self {
        Expression { terms: Vec::new() }
    }

    pub fn one() -> Self {
        Expression {
            terms: vec![Term::constant(1)],
        }
    }

    pub fn from_term(t: Term) -> Self {
        normalize(vec![t])
    }

    /// Wraps terms the caller guarantees are already normalized.
    pub(crate) fn from_sorted_unchecked(terms: Vec<Term>) -> Self {
        debug_assert!(is_normalized(&terms));
        Expression { terms }
    }

    /// Wraps terms after checking the normalization invariants.
    pub fn try_from_sorted(terms: Vec<Term>) -> Option<Self> {
        is_normalized(&terms).then_some(Expression { terms })
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn into_terms(self) -> Vec<Term> {
        self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Same as [`Expression::is_zero`].
    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add(&self, other: &Expression) -> Expression {
        add_expressions(self, other)
    }

    pub fn mul(&self, other: &Expression) -> Expression {
        multiply_expressions(self, other)
    }

    pub fn pow(&self, n: u32) -> Expression {
        pow_expression(self, n)
    }

    pub fn neg(&self) -> Expression {
        Expression {
            terms: self
                .terms
                .iter()
                .map(|t| Term {
                    coeff: -&t.coeff,
                    mono: t.mono.clone(),
                })
                .collect(),
        }
    }
}

pub fn is_normalized(terms: &[Term]) -> bool {
    terms.iter().all(|t| !t.coeff.is_zero()) && terms.windows(2).all(|w| w[0].mono < w[1].mono)
}

/// Sorts raw terms, combines equal monomials and drops zero sums.
pub fn normalize(mut raw: Vec<Term>) -> Expression {
    raw.sort_unstable_by(|a, b| a.mono.cmp(&b.mono));
    let mut out: Vec<Term> = Vec::with_capacity(raw.len());
    for t in raw {
        match out.last_mut() {
            Some(last) if last.mono == t.mono => last.coeff += t.coeff,
            _ => {
                if let Some(last) = out.last() {
                    if last.coeff.is_zero() {
                        out.pop();
                    }
                }
                out.push(t);
            }
        }
    }
    if out.last().is_some_and(|t| t.coeff.is_zero()) {
        out.pop();
    }
    Expression { terms: out }
}

/// Merges two normalized term sequences in one linear pass.
pub fn add_expressions(a: &Expression, b: &Expression) -> Expression {
    let (x, y) = (&a.terms, &b.terms);
    let mut out = Vec::with_capacity(x.len() + y.len());
    let (mut i, mut j) = (0, 0);
    while i < x.len() && j < y.len() {
        match x[i].mono.cmp(&y[j].mono) {
            Ordering::Less => {
                out.push(x[i].clone());
                i += 1;
            }
            Ordering::Greater => {
                out.push(y[j].clone());
                j += 1;
            }
            Ordering::Equal => {
                let c = &x[i].coeff + &y[j].coeff;
                if !c.is_zero() {
                    out.push(Term::new(c, x[i].mono.clone()));
                }
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&x[i..]);
    out.extend_from_slice(&y[j..]);
    Expression { terms: out }
}

pub fn multiply_expressions(a: &Expression, b: &Expression) -> Expression {
    let mut raw = Vec::with_capacity(a.terms.len() * b.terms.len());
    for s in &a.terms {
        for t in &b.terms {
            raw.push(s.mul(t));
        }
    }
    normalize(raw)
}

/// `a^n` by repeated multiplication; `a^0` is the constant one.
pub fn pow_expression(a: &Expression, n: u32) -> Expression {
    let mut acc = Expression::one();
    for _ in 0..n {
        acc = multiply_expressions(&acc, a);
    }
    acc
}
