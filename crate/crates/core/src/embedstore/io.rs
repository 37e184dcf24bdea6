//! On-disk formats.
//!
//! `GEMB` matrix: magic | version u16 = 1 | dtype u8 = 1 (f32) | reserved u8 |
//! rows u64 | dim u64 | rows x dim f32, all little-endian, row-major.
//! A TSV alternative holds `dense_id<TAB>space-separated decimals` per line.
//!
//! `GNBC` cache: magic | version u16 | k u32 | rows u64 | dim u64 | per row
//! k neighbor ids (u64) followed by dim f32 pooled-mean values.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::{EmbeddingMatrix, NeighborCache};
use crate::binio::{put_f32s, read_bytes, Reader, VERSION};
use crate::error::{GraspError, Result};

const GEMB_MAGIC: &[u8; 4] = b"GEMB";
const GNBC_MAGIC: &[u8; 4] = b"GNBC";
const DTYPE_F32: u8 = 1;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    read_bytes(path, "expected an embedding or cache file here")
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| GraspError::io(path, e))
}

pub(crate) fn encode_gemb(m: &EmbeddingMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 4 * m.rows() * m.dim());
    out.extend_from_slice(GEMB_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(DTYPE_F32);
    out.push(0);
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.dim() as u64).to_le_bytes());
    put_f32s(&mut out, m.values().iter());
    out
}

pub(crate) fn decode_gemb(bytes: &[u8], what: &str) -> Result<EmbeddingMatrix> {
    let mut r = Reader::new(bytes, what);
    r.magic(GEMB_MAGIC)?;
    r.version()?;
    let at = r.offset();
    let dtype = r.u8()?;
    if dtype != DTYPE_F32 {
        return Err(r.err(at, format!("unsupported dtype {dtype}")));
    }
    r.u8()?;
    let rows = r.u64()? as usize;
    let at = r.offset();
    let dim = r.u64()? as usize;
    if dim == 0 {
        return Err(r.err(at, "dim must be positive"));
    }
    let expected = rows.checked_mul(dim).and_then(|n| n.checked_mul(4));
    if expected != Some(bytes.len() - r.offset()) {
        return Err(r.err(
            r.offset(),
            format!(
                "payload is {} bytes, header declares {rows}x{dim} f32",
                bytes.len() - r.offset()
            ),
        ));
    }
    let values = r.f32_matrix(rows, dim)?;
    r.finish()?;
    EmbeddingMatrix::new(values)
}

fn decode_tsv(text: &str, what: &str) -> Result<EmbeddingMatrix> {
    let mut rows: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    let mut dim = None;
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let at = || format!("{what} line {line_no}");
        let (id, rest) = line
            .split_once('\t')
            .ok_or_else(|| GraspError::format(at(), "expected dense_id<TAB>values"))?;
        let id: usize = id
            .trim()
            .parse()
            .map_err(|_| GraspError::format(at(), format!("bad row id {id:?}")))?;
        let values = rest
            .split_whitespace()
            .map(|t| match t.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(GraspError::format(at(), format!("bad value {t:?}"))),
            })
            .collect::<Result<Vec<f64>>>()?;
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(GraspError::format(
                    at(),
                    format!("row has {} values, expected {d}", values.len()),
                ))
            }
            _ => {}
        }
        rows.push((id, line_no, values));
    }
    let dim = dim
        .filter(|&d| d > 0)
        .ok_or_else(|| GraspError::format(what, "no rows"))?;
    rows.sort_by_key(|r| r.0);
    let mut flat = Vec::with_capacity(rows.len() * dim);
    for (expected, (id, line_no, values)) in rows.into_iter().enumerate() {
        if id != expected {
            return Err(GraspError::format(
                format!("{what} line {line_no}"),
                format!("row ids must be 0..n without gaps or duplicates (missing {expected})"),
            ));
        }
        flat.extend(values);
    }
    let n = flat.len() / dim;
    EmbeddingMatrix::new(Array2::from_shape_vec((n, dim), flat).expect("sized"))
}

/// Loads a `GEMB` binary file, or the TSV alternative when the magic is absent.
pub fn load_embedding_matrix(path: &Path) -> Result<EmbeddingMatrix> {
    let bytes = read_file(path)?;
    let what = path.display().to_string();
    if bytes.starts_with(GEMB_MAGIC) {
        return decode_gemb(&bytes, &what);
    }
    match std::str::from_utf8(&bytes) {
        Ok(text) if text.lines().any(|l| l.contains('\t')) => decode_tsv(text, &what),
        _ => Err(GraspError::format(
            format!("{what} byte offset 0"),
            "bad magic: not a GEMB or TSV matrix",
        )),
    }
}

pub fn write_embedding_matrix(m: &EmbeddingMatrix, path: &Path) -> Result<()> {
    write_file(path, &encode_gemb(m))
}

pub(crate) fn encode_gnbc(c: &NeighborCache) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(GNBC_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(c.k() as u32).to_le_bytes());
    out.extend_from_slice(&(c.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(c.dim() as u64).to_le_bytes());
    for r in 0..c.rows() {
        for &id in c.neighbors(r) {
            out.extend_from_slice(&(id as u64).to_le_bytes());
        }
        put_f32s(&mut out, c.pooled_mean(r).iter());
    }
    out
}

pub(crate) fn decode_gnbc(bytes: &[u8], what: &str) -> Result<NeighborCache> {
    let mut r = Reader::new(bytes, what);
    r.magic(GNBC_MAGIC)?;
    r.version()?;
    let k = r.u32()? as usize;
    let rows = r.u64()? as usize;
    let dim = r.u64()? as usize;
    let mut ids = Vec::with_capacity(rows * k);
    let mut means = Vec::with_capacity(rows * dim);
    for row in 0..rows {
        for _ in 0..k {
            let at = r.offset();
            let id = r.u64()? as usize;
            if id >= rows || id == row {
                return Err(r.err(at, format!("invalid neighbor id {id} for row {row}")));
            }
            ids.push(id);
        }
        for _ in 0..dim {
            means.push(r.f32()? as f64);
        }
    }
    r.finish()?;
    Ok(NeighborCache::from_parts(
        k,
        ids,
        Array2::from_shape_vec((rows, dim), means).expect("sized"),
    ))
}

pub fn write_neighbor_cache(c: &NeighborCache, path: &Path) -> Result<()> {
    write_file(path, &encode_gnbc(c))
}

pub fn read_neighbor_cache(path: &Path) -> Result<NeighborCache> {
    let bytes = read_file(path)?;
    decode_gnbc(&bytes, &path.display().to_string())
}
