//! Frozen semantic embedding databases and exact neighbor retrieval.
//!
//! Similarity is cosine on L2-normalized copies; the pooled neighbor means
//! are taken over the original rows.

mod io;
mod synth;

pub use io::{load_embedding_matrix, read_neighbor_cache, write_embedding_matrix, write_neighbor_cache};
pub use synth::{synth_corpus, SynthConfig, SynthCorpus};

use ndarray::{Array2, ArrayView1, Axis};
use rayon::prelude::*;

use crate::error::{GraspError, Result};

/// Default neighbor pool size.
pub const DEFAULT_K: usize = 10;

/// Immutable row-major embedding matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    values: Array2<f64>,
    normalized: bool,
    zero_rows: usize,
}

impl EmbeddingMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.ncols() == 0 {
            return Err(GraspError::Argument("embedding dimension must be positive".into()));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(GraspError::format(
                format!("row {}", pos / values.ncols()),
                "non-finite embedding value",
            ));
        }
        Ok(Self {
            values: values.as_standard_layout().into_owned(),
            normalized: false,
            zero_rows: 0,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(GraspError::Argument("rows have different widths".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let values = Array2::from_shape_vec((rows.len(), dim), flat).expect("shape checked");
        Self::new(values)
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn row(&self, r: usize) -> ArrayView1<'_, f64> {
        self.values.row(r)
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Rows that had zero norm when normalized.
    pub fn zero_rows(&self) -> usize {
        self.zero_rows
    }

    /// Copy with the given rows, in order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            values: self.values.select(Axis(0), rows),
            normalized: self.normalized,
            zero_rows: 0,
        }
    }

    /// FNV-1a over the bit patterns of all values.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.values.iter() {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

/// Scales each nonzero row to unit norm; zero rows stay zero and are counted.
pub fn normalize_rows(m: &EmbeddingMatrix) -> EmbeddingMatrix {
    let mut values = m.values.clone();
    let mut zero_rows = 0;
    for mut row in values.rows_mut() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.mapv_inplace(|v| v / norm);
        } else {
            zero_rows += 1;
        }
    }
    EmbeddingMatrix {
        values,
        normalized: true,
        zero_rows,
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_k(m: &EmbeddingMatrix, k: usize) -> Result<()> {
    if k == 0 || k + 1 > m.rows() {
        return Err(GraspError::Argument(format!(
            "k = {k} out of range for {} rows (need 1 <= k <= rows - 1)",
            m.rows()
        )));
    }
    Ok(())
}

fn ranked_neighbors(normed: &EmbeddingMatrix, row: usize, k: usize) -> Vec<(usize, f64)> {
    let data = normed.values.as_slice().expect("standard layout");
    let d = normed.dim();
    let q = &data[row * d..(row + 1) * d];
    let mut sims: Vec<(usize, f64)> = (0..normed.rows())
        .filter(|&r| r != row)
        .map(|r| (r, dot(q, &data[r * d..(r + 1) * d])))
        .collect();
    let order = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if k < sims.len() {
        sims.select_nth_unstable_by(k - 1, order);
        sims.truncate(k);
    }
    sims.sort_unstable_by(order);
    sims
}

/// The `k` rows most cosine-similar to `row` (itself excluded), sorted by
/// descending similarity with ties broken by ascending index.
pub fn topk_neighbors(m: &EmbeddingMatrix, row: usize, k: usize) -> Result<Vec<(usize, f64)>> {
    if !m.normalized {
        return Err(GraspError::Argument("topk_neighbors needs a normalized matrix".into()));
    }
    if row >= m.rows() {
        return Err(GraspError::Lookup {
            what: "embedding row",
            id: row,
            size: m.rows(),
        });
    }
    check_k(m, k)?;
    Ok(ranked_neighbors(m, row, k))
}

/// Precomputed top-k neighbor ids and pooled neighbor means for every row.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborCache {
    k: usize,
    neighbor_ids: Vec<usize>,
    pooled_means: Array2<f64>,
}

impl NeighborCache {
    pub(crate) fn from_parts(k: usize, neighbor_ids: Vec<usize>, pooled_means: Array2<f64>) -> Self {
        debug_assert_eq!(neighbor_ids.len(), k * pooled_means.nrows());
        Self {
            k,
            neighbor_ids,
            pooled_means,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn rows(&self) -> usize {
        self.pooled_means.nrows()
    }

    pub fn dim(&self) -> usize {
        self.pooled_means.ncols()
    }

    pub fn neighbors(&self, row: usize) -> &[usize] {
        &self.neighbor_ids[row * self.k..(row + 1) * self.k]
    }

    pub fn pooled_mean(&self, row: usize) -> ArrayView1<'_, f64> {
        self.pooled_means.row(row)
    }

    pub fn pooled_means(&self) -> &Array2<f64> {
        &self.pooled_means
    }
}

/// Retrieves neighbors on normalized copies of `m` and averages the original
/// rows. Means are stored at 32-bit precision, the on-disk precision, so an
/// in-memory cache and one read back from disk are identical.
///
/// `m` may be normalized or raw; a raw matrix is normalized internally for
/// retrieval only.
pub fn build_neighbor_cache(m: &EmbeddingMatrix, k: usize) -> Result<NeighborCache> {
    check_k(m, k)?;
    let normed = if m.normalized { m.clone() } else { normalize_rows(m) };
    let rows: Vec<Vec<usize>> = (0..m.rows())
        .into_par_iter()
        .map(|r| ranked_neighbors(&normed, r, k).into_iter().map(|(i, _)| i).collect())
        .collect();
    let mut pooled = Array2::<f64>::zeros((m.rows(), m.dim()));
    for (r, ids) in rows.iter().enumerate() {
        let mut acc = pooled.row_mut(r);
        for &i in ids {
            acc += &m.values.row(i);
        }
        acc.mapv_inplace(|v| (v / k as f64) as f32 as f64);
    }
    Ok(NeighborCache::from_parts(
        k,
        rows.into_iter().flatten().collect(),
        pooled,
    ))
}

/// An embedding matrix together with its neighbor cache.
#[derive(Debug, Clone)]
pub struct SemanticStore {
    pub embeddings: EmbeddingMatrix,
    pub cache: NeighborCache,
}

impl SemanticStore {
    pub fn new(embeddings: EmbeddingMatrix, cache: NeighborCache) -> Result<Self> {
        if embeddings.rows() != cache.rows() || embeddings.dim() != cache.dim() {
            return Err(GraspError::Compatibility(format!(
                "embedding matrix is {}x{} but neighbor cache is {}x{}",
                embeddings.rows(),
                embeddings.dim(),
                cache.rows(),
                cache.dim()
            )));
        }
        Ok(Self { embeddings, cache })
    }

    pub fn build(embeddings: EmbeddingMatrix, k: usize) -> Result<Self> {
        let cache = build_neighbor_cache(&embeddings, k)?;
        Ok(Self { embeddings, cache })
    }

    pub fn rows(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.dim()
    }

    pub fn embedding(&self, r: usize) -> ArrayView1<'_, f64> {
        self.embeddings.row(r)
    }

    pub fn neighbor_mean(&self, r: usize) -> ArrayView1<'_, f64> {
        self.cache.pooled_mean(r)
    }
}
