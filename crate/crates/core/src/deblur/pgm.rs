//! Binary 8-bit PGM (`P5`) frames.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Encodes `img` (intensities in `[0, 1]`, clamped) as an 8-bit `P5` image.
pub fn encode_pgm(img: &DMatrix<f64>) -> Vec<u8> {
    let (h, w) = img.shape();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.reserve(w * h);
    for y in 0..h {
        for x in 0..w {
            out.push((img[(y, x)].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out
}

/// Decodes a `P5` image with `maxval ≤ 255`, mapping samples linearly onto
/// `[0, 1]`. `#` comments in the header are skipped.
pub fn decode_pgm(bytes: &[u8]) -> Result<DMatrix<f64>> {
    let mut pos = 0;
    let mut header = [0usize; 3];
    let magic = next_token(bytes, &mut pos)?;
    if magic != b"P5" {
        return Err(Error::Format("not a binary PGM (missing P5 magic)".into()));
    }
    for field in header.iter_mut() {
        let tok = next_token(bytes, &mut pos)?;
        *field = std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("malformed PGM header".into()))?;
    }
    let [w, h, maxval] = header;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("unsupported PGM maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let need = w.checked_mul(h).ok_or_else(|| Error::Format("PGM size overflows".into()))?;
    let raster = bytes
        .get(pos..)
        .filter(|r| r.len() >= need)
        .ok_or_else(|| Error::Format(format!("PGM raster shorter than {w}x{h}")))?;
    let scale = maxval as f64;
    Ok(DMatrix::from_fn(h, w, |y, x| {
        (raster[y * w + x] as f64 / scale).clamp(0.0, 1.0)
    }))
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format("truncated PGM header".into()));
    }
    Ok(&bytes[start..*pos])
}

pub fn read_pgm(path: &Path) -> Result<DMatrix<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_pgm(path: &Path, img: &DMatrix<f64>) -> Result<()> {
    fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
}

/// All `*.pgm` files in `dir`, sorted by file name.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .is_some_and(|ext| ext.eq_ignore_ascii_case("pgm"))
        })
        .collect();
    paths.sort();
    Ok(paths)
}
