//! Middlebury `.flo` reader and writer.
//!
//! Layout: `f32` magic 202021.25, `i32` width, `i32` height, then row-major
//! interleaved `(u, v)` `f32` pairs, all little-endian.

use crate::error::{Error, Result};

use super::FlowField;

pub const FLO_MAGIC: f32 = 202021.25;

/// Components above this magnitude mark unknown flow in third-party files.
pub const UNKNOWN_FLOW_THRESHOLD: f32 = 1e9;

pub fn write_flo(flow: &FlowField) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * flow.h * flow.w);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(flow.w as i32).to_le_bytes());
    out.extend_from_slice(&(flow.h as i32).to_le_bytes());
    for v in flow.uv() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses a `.flo` payload. Pixels whose components exceed
/// [`UNKNOWN_FLOW_THRESHOLD`] are marked invalid in the returned mask.
pub fn read_flo(bytes: &[u8]) -> Result<FlowField> {
    if bytes.len() < 4 {
        return Err(Error::NotFlo);
    }
    let word = |i: usize| -> [u8; 4] { bytes[i..i + 4].try_into().unwrap() };
    if f32::from_le_bytes(word(0)) != FLO_MAGIC {
        return Err(Error::NotFlo);
    }
    if bytes.len() < 12 {
        return Err(Error::CorruptFlo("truncated header".into()));
    }
    let w = i32::from_le_bytes(word(4));
    let h = i32::from_le_bytes(word(8));
    if w <= 0 || h <= 0 {
        return Err(Error::CorruptFlo(format!("bad dimensions {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let expected = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(12))
        .ok_or_else(|| Error::CorruptFlo("dimensions overflow".into()))?;
    if bytes.len() != expected {
        return Err(Error::CorruptFlo(format!(
            "expected {expected} bytes for {w}x{h}, got {}",
            bytes.len()
        )));
    }
    let uv: Vec<f32> = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let unknown = |p: &[f32]| p.iter().any(|v| !v.is_finite() || v.abs() > UNKNOWN_FLOW_THRESHOLD);
    let mask = if uv.chunks_exact(2).any(unknown) {
        Some(uv.chunks_exact(2).map(|p| !unknown(p)).collect())
    } else {
        None
    };
    let mut flow = FlowField::from_interleaved(h, w, uv)?;
    flow.mask = mask;
    Ok(flow)
}
