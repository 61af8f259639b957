//! Recursive-descent parser for the program mini-language.
//!
//! ```text
//! program   := { decl } { module } ".end"
//! decl      := "symbols" name { "," name } ";" | "local" name "=" expr ";"
//! module    := { stmt } ".sort"
//! stmt      := "id" name "=" expr ";" | "multiply" expr ";"
//! expr      := term { ("+"|"-") term }
//! term      := factor { "*" factor }
//! factor    := ["-"] base [ "^" integer ]
//! base      := name | integer | "(" expr ")"
//! ```
//!
//! A `*` in the first column starts a comment running to the end of the line.
//! Expressions are normalized as they are parsed.

use std::fmt;

use num_bigint::{BigInt, Sign};
use num_traits::{One, ToPrimitive, Zero};
use thiserror::Error;

use crate::term::{pow_expression, Expression, Monomial, SymbolId, SymbolTable, Term, TermError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Statement {
    /// Replace every `target^n` by `rhs^n`.
    IdSubst {
        target: SymbolId,
        rhs: Expression,
    },
    Multiply {
        factor: Expression,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Module {
    pub statements: Vec<Statement>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub symtab: SymbolTable,
    /// Local expression definitions in declaration order.
    pub initial: Vec<(String, Expression)>,
    pub modules: Vec<Module>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("unexpected character `{0}`")]
    UnexpectedChar(char),
    #[error("unknown directive `.{0}`")]
    UnknownDirective(String),
    #[error("expected {expected}, found {found}")]
    Expected { expected: String, found: String },
    #[error("undeclared symbol `{0}`")]
    UndeclaredSymbol(String),
    #[error("symbol `{0}` declared twice")]
    DuplicateSymbol(String),
    #[error("local expression `{0}` defined twice")]
    DuplicateLocal(String),
    #[error("`{0}` is a keyword")]
    ReservedName(String),
    #[error("exponent must be a positive integer, found {0}")]
    BadExponent(String),
    #[error("missing `.end`")]
    MissingEnd,
    #[error("program has no module (expected at least one `.sort`)")]
    NoModule,
    #[error("text after `.end`")]
    TrailingInput,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {col}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Name(String),
    Int(BigInt),
    /// A number with a fractional part; only ever an error.
    Decimal(String),
    Sort,
    End,
    Plus,
    Minus,
    Star,
    Caret,
    LParen,
    RParen,
    Comma,
    Semi,
    Eq,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Name(n) => write!(f, "`{n}`"),
            Tok::Int(i) => write!(f, "`{i}`"),
            Tok::Decimal(d) => write!(f, "`{d}`"),
            Tok::Sort => f.write_str("`.sort`"),
            Tok::End => f.write_str("`.end`"),
            Tok::Plus => f.write_str("`+`"),
            Tok::Minus => f.write_str("`-`"),
            Tok::Star => f.write_str("`*`"),
            Tok::Caret => f.write_str("`^`"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::Comma => f.write_str("`,`"),
            Tok::Semi => f.write_str("`;`"),
            Tok::Eq => f.write_str("`=`"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

const KEYWORDS: [&str; 4] = ["symbols", "local", "id", "multiply"];

fn lex(text: &str) -> Result<Vec<Spanned>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let err = |line, col, kind| ParseError { line, col, kind };

    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '*' && col == 1 {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let (start_line, start_col) = (line, col);
        let start = i;
        let tok = if c.is_ascii_alphabetic() || c == '_' {
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            Tok::Name(chars[start..i].iter().collect())
        } else if c.is_ascii_digit() {
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            if i + 1 < chars.len() && chars[i] == '.' && chars[i + 1].is_ascii_digit() {
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                Tok::Decimal(chars[start..i].iter().collect())
            } else {
                let digits: String = chars[start..i].iter().collect();
                Tok::Int(digits.parse().expect("ascii digits"))
            }
        } else if c == '.' {
            i += 1;
            while i < chars.len() && chars[i].is_ascii_alphabetic() {
                i += 1;
            }
            let word: String = chars[start + 1..i].iter().collect();
            match word.as_str() {
                "sort" => Tok::Sort,
                "end" => Tok::End,
                _ => {
                    return Err(err(
                        start_line,
                        start_col,
                        ParseErrorKind::UnknownDirective(word),
                    ))
                }
            }
        } else {
            i += 1;
            match c {
                '+' => Tok::Plus,
                '-' => Tok::Minus,
                '*' => Tok::Star,
                '^' => Tok::Caret,
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                ',' => Tok::Comma,
                ';' => Tok::Semi,
                '=' => Tok::Eq,
                other => {
                    return Err(err(
                        start_line,
                        start_col,
                        ParseErrorKind::UnexpectedChar(other),
                    ))
                }
            }
        };
        col += i - start;
        out.push(Spanned {
            tok,
            line: start_line,
            col: start_col,
        });
    }
    out.push(Spanned {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    symtab: SymbolTable,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn bump(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error_here(&self, kind: ParseErrorKind) -> ParseError {
        let s = &self.toks[self.pos];
        ParseError {
            line: s.line,
            col: s.col,
            kind,
        }
    }

    fn expected(&self, what: &str) -> ParseError {
        if *self.peek() == Tok::Eof {
            return self.error_here(ParseErrorKind::MissingEnd);
        }
        self.error_here(ParseErrorKind::Expected {
            expected: what.to_string(),
            found: self.peek().to_string(),
        })
    }

    fn expect(&mut self, tok: Tok) -> Result<(), ParseError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            Err(self.expected(&tok.to_string()))
        }
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Name(n) if n == kw)
    }

    /// A user-chosen name, i.e. anything but a keyword.
    fn name(&mut self) -> Result<(String, ParseError), ParseError> {
        let here = self.error_here(ParseErrorKind::MissingEnd);
        match self.peek().clone() {
            Tok::Name(n) if KEYWORDS.contains(&n.as_str()) => {
                Err(self.error_here(ParseErrorKind::ReservedName(n)))
            }
            Tok::Name(n) => {
                self.bump();
                Ok((n, here))
            }
            _ => Err(self.expected("a name")),
        }
    }

    fn symbol(&mut self) -> Result<SymbolId, ParseError> {
        let (n, at) = self.name()?;
        self.symtab.lookup(&n).map_err(|e| match e {
            TermError::UndeclaredSymbol(n) => ParseError {
                kind: ParseErrorKind::UndeclaredSymbol(n),
                ..at
            },
            other => unreachable!("lookup only fails on undeclared names: {other}"),
        })
    }

    fn program(mut self) -> Result<Program, ParseError> {
        let mut initial: Vec<(String, Expression)> = Vec::new();
        loop {
            if self.is_keyword("symbols") {
                self.bump();
                loop {
                    let (n, at) = self.name()?;
                    if self.symtab.declare(&n).is_err() {
                        return Err(ParseError {
                            kind: ParseErrorKind::DuplicateSymbol(n),
                            ..at
                        });
                    }
                    if *self.peek() == Tok::Comma {
                        self.bump();
                    } else {
                        break;
                    }
                }
                self.expect(Tok::Semi)?;
            } else if self.is_keyword("local") {
                self.bump();
                let (n, at) = self.name()?;
                if initial.iter().any(|(m, _)| *m == n) {
                    return Err(ParseError {
                        kind: ParseErrorKind::DuplicateLocal(n),
                        ..at
                    });
                }
                self.expect(Tok::Eq)?;
                let e = self.expr()?;
                self.expect(Tok::Semi)?;
                initial.push((n, e));
            } else {
                break;
            }
        }

        let mut modules = Vec::new();
        loop {
            match self.peek() {
                Tok::End => {
                    self.bump();
                    break;
                }
                Tok::Eof => return Err(self.error_here(ParseErrorKind::MissingEnd)),
                _ => modules.push(self.module()?),
            }
        }
        if *self.peek() != Tok::Eof {
            return Err(self.error_here(ParseErrorKind::TrailingInput));
        }
        if modules.is_empty() {
            let end = &self.toks[self.pos - 1];
            return Err(ParseError {
                line: end.line,
                col: end.col,
                kind: ParseErrorKind::NoModule,
            });
        }
        Ok(Program {
            symtab: self.symtab,
            initial,
            modules,
        })
    }

    fn module(&mut self) -> Result<Module, ParseError> {
        let mut statements = Vec::new();
        loop {
            if *self.peek() == Tok::Sort {
                self.bump();
                return Ok(Module { statements });
            }
            if self.is_keyword("id") {
                self.bump();
                let target = self.symbol()?;
                self.expect(Tok::Eq)?;
                let rhs = self.expr()?;
                self.expect(Tok::Semi)?;
                statements.push(Statement::IdSubst { target, rhs });
            } else if self.is_keyword("multiply") {
                self.bump();
                let factor = self.expr()?;
                self.expect(Tok::Semi)?;
                statements.push(Statement::Multiply { factor });
            } else {
                return Err(self.expected("`id`, `multiply` or `.sort`"));
            }
        }
    }

    fn expr(&mut self) -> Result<Expression, ParseError> {
        let mut acc = self.term()?;
        loop {
            match self.peek() {
                Tok::Plus => {
                    self.bump();
                    acc = acc.add(&self.term()?);
                }
                Tok::Minus => {
                    self.bump();
                    acc = acc.add(&self.term()?.neg());
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<Expression, ParseError> {
        let mut acc = self.factor()?;
        while *self.peek() == Tok::Star {
            self.bump();
            acc = acc.mul(&self.factor()?);
        }
        Ok(acc)
    }

    fn factor(&mut self) -> Result<Expression, ParseError> {
        let negate = if *self.peek() == Tok::Minus {
            self.bump();
            true
        } else {
            false
        };
        let base = self.base()?;
        let value = if *self.peek() == Tok::Caret {
            self.bump();
            let n = self.exponent()?;
            pow_expression(&base, n)
        } else {
            base
        };
        Ok(if negate { value.neg() } else { value })
    }

    /// Integer exponent; `a^b^c` groups as `a^(b^c)`.
    fn exponent(&mut self) -> Result<u32, ParseError> {
        let at = self.error_here(ParseErrorKind::MissingEnd);
        let bad = |what: String| ParseError {
            kind: ParseErrorKind::BadExponent(what),
            ..at.clone()
        };
        let base = match self.peek().clone() {
            Tok::Int(i) => {
                self.bump();
                i
            }
            Tok::Minus => {
                self.bump();
                let shown = match self.peek() {
                    Tok::Int(i) => format!("-{i}"),
                    other => format!("`-` followed by {other}"),
                };
                return Err(bad(shown));
            }
            Tok::Eof => return Err(self.error_here(ParseErrorKind::MissingEnd)),
            other => return Err(bad(other.to_string())),
        };
        let value = if *self.peek() == Tok::Caret {
            self.bump();
            let inner = self.exponent()?;
            let b = base.to_u32().ok_or_else(|| bad(base.to_string()))?;
            b.checked_pow(inner)
                .ok_or_else(|| bad(format!("{b}^{inner}")))?
        } else {
            base.to_u32().ok_or_else(|| bad(base.to_string()))?
        };
        if value == 0 {
            return Err(bad("0".to_string()));
        }
        Ok(value)
    }

    fn base(&mut self) -> Result<Expression, ParseError> {
        match self.peek().clone() {
            Tok::Int(i) => {
                self.bump();
                Ok(Expression::from_term(Term::constant(i)))
            }
            Tok::Name(_) => {
                let id = self.symbol()?;
                Ok(Expression::from_term(Term::new(1, Monomial::var(id, 1))))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            _ => Err(self.expected("a symbol, integer or `(`")),
        }
    }
}

pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    let toks = lex(text)?;
    Parser {
        toks,
        pos: 0,
        symtab: SymbolTable::new(),
    }
    .program()
}

/// Parses a standalone expression against an existing symbol table.
pub fn parse_expression(text: &str, symtab: &SymbolTable) -> Result<Expression, ParseError> {
    let toks = lex(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        symtab: symtab.clone(),
    };
    let e = p.expr()?;
    if *p.peek() != Tok::Eof {
        return Err(p.expected("end of expression"));
    }
    Ok(e)
}

/// Renders an expression in canonical term order, e.g. `x^2+2*x*y+y^2`.
pub fn format_expression(e: &Expression, symtab: &SymbolTable) -> String {
    if e.is_zero() {
        return "0".to_string();
    }
    let mut out = String::new();
    for (k, t) in e.terms().iter().enumerate() {
        let negative = t.coeff.sign() == Sign::Minus;
        if negative {
            out.push('-');
        } else if k > 0 {
            out.push('+');
        }
        let magnitude = t.coeff.magnitude();
        let unit_coeff = magnitude.is_one();
        let mut first = true;
        if !unit_coeff || t.mono.is_unit() {
            out.push_str(&magnitude.to_string());
            first = false;
        }
        for &(id, exp) in t.mono.factors() {
            if !first {
                out.push('*');
            }
            first = false;
            out.push_str(symtab.name(id).unwrap_or("?"));
            if exp != 1 {
                out.push('^');
                out.push_str(&exp.to_string());
            }
        }
    }
    debug_assert!(!e.terms().iter().any(|t| t.coeff.is_zero()));
    out
}
