//! Byte encoding of term sequences for the message-passing transport.
//!
//! All integers are little-endian:
//!
//! ```text
//! [u32 term_count]
//! per term:   [u8 sign: 0 plus, 1 minus] [u32 magnitude_len] [magnitude bytes, LE]
//!             [u16 factor_count]
//! per factor: [u32 symbol_id] [u32 exponent]
//! ```
//!
//! Magnitudes are minimal: zero has length 0, and nonzero magnitudes never end
//! in a zero byte.

use num_bigint::{BigInt, BigUint, Sign};
use num_traits::Zero;
use thiserror::Error;

use crate::term::{Monomial, SymbolId, Term};

pub const HEADER_LEN: usize = 4;
const TERM_FIXED_LEN: usize = 1 + 4 + 2;
const FACTOR_LEN: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed term bytes at offset {offset}: {kind}")]
pub struct WireError {
    pub offset: usize,
    pub kind: WireErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireErrorKind {
    #[error("input truncated, needed {needed} more bytes")]
    Truncated { needed: usize },
    #[error("{0} trailing bytes after the last term")]
    Overlong(usize),
    #[error("magnitude length {len} exceeds the {remaining} bytes remaining")]
    MagnitudeOverflow { len: u32, remaining: usize },
    #[error("magnitude has a trailing zero byte")]
    NonMinimalMagnitude,
    #[error("invalid sign byte {0}")]
    BadSign(u8),
    #[error("negative zero")]
    NegativeZero,
    #[error("factor with zero exponent")]
    ZeroExponent,
    #[error("factor symbol ids not strictly increasing")]
    UnorderedFactors,
}

/// Exact encoded size of one term.
pub fn term_wire_size(t: &Term) -> usize {
    let mag = if t.coeff.is_zero() {
        0
    } else {
        t.coeff.magnitude().to_bytes_le().len()
    };
    TERM_FIXED_LEN + mag + FACTOR_LEN * t.mono.factors().len()
}

/// Exact encoded size of a term sequence, header included.
pub fn wire_size(ts: &[Term]) -> usize {
    HEADER_LEN + ts.iter().map(term_wire_size).sum::<usize>()
}

pub fn serialize_terms(ts: &[Term]) -> Vec<u8> {
    let mut out = Vec::with_capacity(wire_size(ts));
    encode_into(ts, &mut out);
    out
}

pub fn encode_into(ts: &[Term], out: &mut Vec<u8>) {
    out.extend_from_slice(&(ts.len() as u32).to_le_bytes());
    for t in ts {
        let (sign, mag) = t.coeff.to_bytes_le();
        let mag: &[u8] = if t.coeff.is_zero() { &[] } else { &mag };
        out.push(u8::from(sign == Sign::Minus));
        out.extend_from_slice(&(mag.len() as u32).to_le_bytes());
        out.extend_from_slice(mag);
        let factors = t.mono.factors();
        let count = u16::try_from(factors.len()).expect("term has more than u16::MAX factors");
        out.extend_from_slice(&count.to_le_bytes());
        for &(id, e) in factors {
            out.extend_from_slice(&id.0.to_le_bytes());
            out.extend_from_slice(&e.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, kind: WireErrorKind) -> WireError {
        WireError {
            offset: self.pos,
            kind,
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let remaining = self.bytes.len() - self.pos;
        if remaining < n {
            return Err(self.err(WireErrorKind::Truncated {
                needed: n - remaining,
            }));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn deserialize_terms(bytes: &[u8]) -> Result<Vec<Term>, WireError> {
    let mut r = Reader { bytes, pos: 0 };
    let count = r.u32()? as usize;
    // every term needs at least its fixed fields; cap the preallocation
    let mut out = Vec::with_capacity(count.min(bytes.len() / TERM_FIXED_LEN));
    for _ in 0..count {
        out.push(read_term(&mut r)?);
    }
    if r.pos != bytes.len() {
        return Err(r.err(WireErrorKind::Overlong(bytes.len() - r.pos)));
    }
    Ok(out)
}

fn read_term(r: &mut Reader<'_>) -> Result<Term, WireError> {
    let sign_at = r.pos;
    let sign = r.u8()?;
    if sign > 1 {
        return Err(WireError {
            offset: sign_at,
            kind: WireErrorKind::BadSign(sign),
        });
    }
    let len_at = r.pos;
    let len = r.u32()?;
    let remaining = r.bytes.len() - r.pos;
    if len as usize > remaining {
        return Err(WireError {
            offset: len_at,
            kind: WireErrorKind::MagnitudeOverflow { len, remaining },
        });
    }
    let mag_at = r.pos;
    let mag = r.take(len as usize)?;
    if mag.last() == Some(&0) {
        return Err(WireError {
            offset: mag_at,
            kind: WireErrorKind::NonMinimalMagnitude,
        });
    }
    if mag.is_empty() && sign == 1 {
        return Err(WireError {
            offset: sign_at,
            kind: WireErrorKind::NegativeZero,
        });
    }
    let magnitude = BigUint::from_bytes_le(mag);
    let coeff = if sign == 1 {
        BigInt::from_biguint(Sign::Minus, magnitude)
    } else {
        BigInt::from(magnitude)
    };

    let nfactors = r.u16()? as usize;
    let mut factors = Vec::with_capacity(nfactors);
    let mut prev: Option<u32> = None;
    for _ in 0..nfactors {
        let at = r.pos;
        let id = r.u32()?;
        let e = r.u32()?;
        if e == 0 {
            return Err(WireError {
                offset: at,
                kind: WireErrorKind::ZeroExponent,
            });
        }
        if prev.is_some_and(|p| p >= id) {
            return Err(WireError {
                offset: at,
                kind: WireErrorKind::UnorderedFactors,
            });
        }
        prev = Some(id);
        factors.push((SymbolId(id), e));
    }
    let mono = Monomial::try_from_canonical(factors).expect("factors validated above");
    Ok(Term { coeff, mono })
}
