//! Little-endian binary encoding of a [`SpaceTimeField`], used for the on-disk `Ψ_N` cache.
//!
//! ```text
//! magic[8] | nt: u64 | nx: u64 | horizon, lo, hi, diffusion: f64 | values: f64 × (nt+1)(nx+1)
//! ```

use super::SpaceTimeField;
use crate::error::{Error, Result};

pub const FIELD_MAGIC: [u8; 8] = *b"MFCFLD\x00\x01";
const HEADER_LEN: usize = 8 + 2 * 8 + 4 * 8;

pub fn encode_field(field: &SpaceTimeField) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * field.values().len());
    out.extend_from_slice(&FIELD_MAGIC);
    out.extend_from_slice(&(field.nt() as u64).to_le_bytes());
    out.extend_from_slice(&(field.nx() as u64).to_le_bytes());
    let (lo, hi) = field.domain();
    for v in [field.horizon(), lo, hi, field.diffusion()] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in field.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl Reader<'_> {
    fn take8(&mut self) -> [u8; 8] {
        let (head, rest) = self.bytes.split_at(8);
        self.bytes = rest;
        head.try_into().expect("split_at(8)")
    }
}

/// Decodes and validates an encoded field. Never panics on malformed input.
pub fn decode_field(bytes: &[u8]) -> Result<SpaceTimeField> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Codec(format!("truncated header ({} bytes)", bytes.len())));
    }
    let mut r = Reader { bytes };
    if r.take8() != FIELD_MAGIC {
        return Err(Error::Codec("bad magic or unsupported version".into()));
    }
    let nt = u64::from_le_bytes(r.take8());
    let nx = u64::from_le_bytes(r.take8());
    let horizon = f64::from_le_bytes(r.take8());
    let lo = f64::from_le_bytes(r.take8());
    let hi = f64::from_le_bytes(r.take8());
    let diffusion = f64::from_le_bytes(r.take8());

    let count = nt
        .checked_add(1)
        .zip(nx.checked_add(1))
        .and_then(|(a, b)| a.checked_mul(b))
        .and_then(|c| c.checked_mul(8).map(|_| c))
        .ok_or_else(|| Error::Codec("grid dimensions overflow".into()))?;
    if r.bytes.len() as u64 != count * 8 {
        return Err(Error::Codec(format!("payload has {} bytes, grid needs {}", r.bytes.len(), count * 8)));
    }
    let values: Vec<f64> =
        r.bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunks_exact(8)"))).collect();
    SpaceTimeField::new(horizon, lo, hi, nt as usize, nx as usize, diffusion, values)
        .map_err(|e| Error::Codec(format!("invalid field: {e}")))
}
