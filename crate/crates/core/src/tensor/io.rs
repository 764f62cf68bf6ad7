//! The `T3B` binary tensor format.
//!
//! ```text
//! bytes 0..8    magic "T3BINv01"
//! bytes 8..32   m, l, n as u64 little-endian
//! bytes 32..    m*l*n f64 little-endian, tube-fiber-contiguous
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::DenseTensor3;
use crate::error::{Error, Result};

pub const T3B_MAGIC: &[u8; 8] = b"T3BINv01";
const HEADER_LEN: usize = 8 + 3 * 8;

pub fn encode_t3b(t: &DenseTensor3) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * t.data().len());
    out.extend_from_slice(T3B_MAGIC);
    for d in [t.rows(), t.cols(), t.depth()] {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_t3b(bytes: &[u8]) -> Result<DenseTensor3> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "T3B stream too short for header ({} bytes)",
            bytes.len()
        )));
    }
    if &bytes[..8] != T3B_MAGIC {
        return Err(Error::Format("bad T3B magic".into()));
    }
    let dim = |k: usize| {
        let raw: [u8; 8] = bytes[8 + 8 * k..16 + 8 * k].try_into().unwrap();
        u64::from_le_bytes(raw)
    };
    let (m, l, n) = (dim(0), dim(1), dim(2));
    let count = m
        .checked_mul(l)
        .and_then(|v| v.checked_mul(n))
        .and_then(|v| usize::try_from(v).ok())
        .ok_or_else(|| Error::Format(format!("T3B dims {m}x{l}x{n} overflow")))?;
    let expected = count
        .checked_mul(8)
        .and_then(|v| v.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::Format(format!("T3B dims {m}x{l}x{n} overflow")))?;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "T3B payload for {m}x{l}x{n} needs {expected} bytes, got {}",
            bytes.len()
        )));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    DenseTensor3::from_vec(m as usize, l as usize, n as usize, data)
}

pub fn write_t3b<W: Write>(t: &DenseTensor3, mut w: W) -> std::io::Result<()> {
    w.write_all(&encode_t3b(t))
}

pub fn read_t3b<R: Read>(mut r: R) -> Result<DenseTensor3> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::Format(format!("reading T3B stream: {e}")))?;
    decode_t3b(&bytes)
}

pub fn save_t3b(t: &DenseTensor3, path: &Path) -> Result<()> {
    fs::write(path, encode_t3b(t)).map_err(|e| Error::io(path, e))
}

pub fn load_t3b(path: &Path) -> Result<DenseTensor3> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_t3b(&bytes)
}
