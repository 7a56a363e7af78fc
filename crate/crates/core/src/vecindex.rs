//! Exact inner-product retrieval over L2-normalized embeddings.
//!
//! Rows are stored as `f32`. The score of a row is defined as the
//! sequential `f64` dot product of the normalized `f64` query with the
//! stored row, so every search path reports bit-identical scores. Batched
//! search prefilters with an `f32` GEMM and rescores the survivors exactly;
//! the prefilter margin is the worst-case rounding error of the GEMM, so the
//! result never differs from a full exact scan.

use std::collections::HashSet;
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::{par, Error, Result};

/// Returns `v / ‖v‖`.
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let mut out = v.to_vec();
    crate::linalg::normalize_in_place(&mut out)?;
    Ok(out)
}

pub fn l2_normalize_f32(v: &[f32]) -> Result<Vec<f64>> {
    let wide: Vec<f64> = v.iter().map(|&x| f64::from(x)).collect();
    l2_normalize(&wide)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub target_id: String,
    pub row: usize,
    pub score: f64,
}

/// Immutable exact index: one unit-norm `f32` row per target.
#[derive(Debug, Clone)]
pub struct FlatIndex {
    dim: usize,
    rows: Vec<f32>,
    ids: Vec<String>,
}

/// Query rows per GEMM call in [`FlatIndex::search_batch`].
const QUERY_BLOCK: usize = 64;

impl FlatIndex {
    /// Normalizes and stores the vectors in the given order.
    pub fn build<I, S, V>(vectors: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, V)>,
        S: Into<String>,
        V: AsRef<[f64]>,
    {
        let mut dim = None;
        let mut rows = Vec::new();
        let mut ids = Vec::new();
        let mut seen = HashSet::new();
        for (id, v) in vectors {
            let id = id.into();
            let v = v.as_ref();
            let d = *dim.get_or_insert(v.len());
            if v.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: v.len() });
            }
            if !seen.insert(id.clone()) {
                return Err(Error::DuplicateId(id));
            }
            let unit = l2_normalize(v)?;
            rows.extend(unit.iter().map(|&x| x as f32));
            ids.push(id);
        }
        let dim = dim.ok_or(Error::EmptyCorpus)?;
        if dim == 0 {
            return Err(Error::invalid("zero-dimensional vectors"));
        }
        Ok(Self { dim, rows, ids })
    }

    pub fn build_f32<I, S, V>(vectors: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, V)>,
        S: Into<String>,
        V: AsRef<[f32]>,
    {
        Self::build(
            vectors.into_iter().map(|(id, v)| (id, v.as_ref().iter().map(|&x| f64::from(x)).collect::<Vec<f64>>())),
        )
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    fn check_query(&self, q: &[f64]) -> Result<Vec<f64>> {
        if q.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: q.len() });
        }
        l2_normalize(q)
    }

    #[inline]
    fn exact_score(&self, unit_query: &[f64], row: usize) -> f64 {
        unit_query.iter().zip(self.row(row)).fold(0.0, |acc, (&q, &r)| acc + q * f64::from(r))
    }

    fn hits(&self, scored: Vec<(usize, f64)>) -> Vec<SearchHit> {
        scored.into_iter().map(|(row, score)| SearchHit { target_id: self.ids[row].clone(), row, score }).collect()
    }

    /// Top `min(k, len)` rows by inner product with the normalized query,
    /// best first; equal scores are ordered by row.
    pub fn search(&self, query: &[f64], k: usize) -> Result<Vec<SearchHit>> {
        if k == 0 {
            return Err(Error::invalid("k must be positive"));
        }
        let q = self.check_query(query)?;
        let scored: Vec<(usize, f64)> = (0..self.len()).map(|r| (r, self.exact_score(&q, r))).collect();
        Ok(self.hits(top_k(scored, k)))
    }

    /// [`search`](Self::search) for many queries at once, blocked through GEMM.
    pub fn search_batch<Q: AsRef<[f64]> + Sync>(&self, queries: &[Q], k: usize) -> Result<Vec<Vec<SearchHit>>> {
        if k == 0 {
            return Err(Error::invalid("k must be positive"));
        }
        let units: Vec<Vec<f64>> = queries.iter().map(|q| self.check_query(q.as_ref())).collect::<Result<_>>()?;
        let margin = self.prefilter_margin();
        let n_blocks = units.len().div_ceil(QUERY_BLOCK);
        let blocks = par::map_range(n_blocks, |b| {
            let block = &units[b * QUERY_BLOCK..((b + 1) * QUERY_BLOCK).min(units.len())];
            self.search_block(block, k, margin)
        });
        Ok(blocks.into_iter().flatten().collect())
    }

    /// Upper bound on twice the difference between the `f32` GEMM score and
    /// the exact score for unit vectors: the GEMM accumulates `dim` products
    /// in `f32` (γ_dim) from a query rounded to `f32` (one more unit roundoff).
    fn prefilter_margin(&self) -> f64 {
        let u = f64::from(f32::EPSILON) / 2.0;
        let n = (self.dim + 2) as f64;
        let gamma = n * u / (1.0 - n * u);
        2.0 * 1.01 * gamma
    }

    fn search_block(&self, units: &[Vec<f64>], k: usize, margin: f64) -> Vec<Vec<SearchHit>> {
        let (m, d, n) = (units.len(), self.dim, self.len());
        let a: Vec<f32> = units.iter().flat_map(|q| q.iter().map(|&x| x as f32)).collect();
        let mut c = vec![0f32; m * n];
        // SAFETY: a is m×d row-major, rows is n×d row-major read as the d×n
        // transpose, c is m×n row-major; all strides stay in bounds.
        unsafe {
            matrixmultiply::sgemm(
                m,
                d,
                n,
                1.0,
                a.as_ptr(),
                d as isize,
                1,
                self.rows.as_ptr(),
                1,
                d as isize,
                0.0,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        let mut scratch = Vec::with_capacity(n);
        units
            .iter()
            .zip(c.chunks_exact(n))
            .map(|(q, approx)| {
                let kth = if k >= n {
                    f32::NEG_INFINITY
                } else if k == 1 {
                    approx.iter().copied().fold(f32::NEG_INFINITY, f32::max)
                } else {
                    scratch.clear();
                    scratch.extend_from_slice(approx);
                    let (_, v, _) = scratch.select_nth_unstable_by(k - 1, |x, y| y.total_cmp(x));
                    *v
                };
                let floor = f64::from(kth) - margin;
                let cands: Vec<(usize, f64)> = approx
                    .iter()
                    .enumerate()
                    .filter(|(_, &s)| f64::from(s) >= floor)
                    .map(|(r, _)| (r, self.exact_score(q, r)))
                    .collect();
                self.hits(top_k(cands, k))
            })
            .collect()
    }
}

fn top_k(mut scored: Vec<(usize, f64)>, k: usize) -> Vec<(usize, f64)> {
    let order = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, order);
        scored.truncate(k);
    }
    scored.sort_by(order);
    scored
}

const VEC_MAGIC: &[u8; 4] = b"VEC1";

/// Writes the `VEC1` binary layout: magic, `u32` count, `u32` dim, then the
/// row-major little-endian `f32` payload.
pub fn write_vec_file<V: AsRef<[f32]>>(mut w: impl Write, rows: &[V]) -> Result<()> {
    let dim = rows.first().map_or(0, |r| r.as_ref().len());
    let count = u32::try_from(rows.len()).map_err(|_| Error::Format("too many rows for VEC1".into()))?;
    w.write_all(VEC_MAGIC)?;
    w.write_all(&count.to_le_bytes())?;
    w.write_all(&(dim as u32).to_le_bytes())?;
    for r in rows {
        let r = r.as_ref();
        if r.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: r.len() });
        }
        for x in r {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_vec_file(mut r: impl Read) -> Result<Vec<Vec<f32>>> {
    let mut header = [0u8; 12];
    r.read_exact(&mut header)?;
    if &header[..4] != VEC_MAGIC {
        return Err(Error::Format("missing VEC1 magic".into()));
    }
    let count = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != count * dim * 4 {
        return Err(Error::Format(format!(
            "VEC1 payload is {} bytes, header promises {count}x{dim} floats",
            payload.len()
        )));
    }
    let floats: Vec<f32> = payload.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
    Ok(floats.chunks(dim.max(1)).take(count).map(<[f32]>::to_vec).collect())
}

/// Reads the id sidecar: one id per line, aligned with VEC1 rows.
pub fn read_id_file(r: impl BufRead) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.is_empty() {
            ids.push(line);
        }
    }
    Ok(ids)
}

pub fn write_id_file(mut w: impl Write, ids: &[String]) -> Result<()> {
    for id in ids {
        writeln!(w, "{id}")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_cases() {
        assert_eq!(l2_normalize(&[3.0, 4.0]).unwrap(), vec![0.6, 0.8]);
        let u = l2_normalize(&[0.6, 0.8]).unwrap();
        assert_eq!(l2_normalize(&u).unwrap(), u);
        assert!(matches!(l2_normalize(&[0.0, 0.0]), Err(Error::DegenerateEmbedding)));
    }

    fn small() -> FlatIndex {
        FlatIndex::build(vec![
            ("a", vec![1.0, 0.0, 0.0, 0.0]),
            ("b", vec![0.0, 2.0, 0.0, 0.0]),
            ("c", vec![1.0, 1.0, 0.0, 0.0]),
        ])
        .unwrap()
    }

    #[test]
    fn build_cases() {
        assert_eq!(small().len(), 3);
        let dup = FlatIndex::build(vec![("a", vec![1.0]), ("a", vec![2.0])]);
        assert!(matches!(dup, Err(Error::DuplicateId(_))));
        let empty = FlatIndex::build(Vec::<(String, Vec<f64>)>::new());
        assert_eq!(empty.unwrap_err().to_string(), "empty corpus");
        let ragged = FlatIndex::build(vec![("a", vec![1.0, 0.0]), ("b", vec![1.0])]);
        assert!(matches!(ragged, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn stored_row_is_its_own_best_hit() {
        let idx = small();
        let hits = idx.search(&[0.0, 5.0, 0.0, 0.0], 1).unwrap();
        assert_eq!(hits[0].target_id, "b");
        assert_eq!(hits[0].score, 1.0);
    }

    #[test]
    fn k_beyond_count_returns_everything_sorted() {
        let hits = small().search(&[1.0, 0.2, 0.0, 0.0], 10).unwrap();
        let ids: Vec<&str> = hits.iter().map(|h| h.target_id.as_str()).collect();
        assert_eq!(ids, ["a", "c", "b"]);
        assert!(hits.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn ties_prefer_earlier_rows() {
        let idx = FlatIndex::build(vec![("x", vec![1.0, 1.0]), ("y", vec![1.0, -1.0]), ("z", vec![1.0, 1.0])]).unwrap();
        let hits = idx.search(&[1.0, 0.0], 3).unwrap();
        assert_eq!(hits.iter().map(|h| h.row).collect::<Vec<_>>(), vec![0, 1, 2]);
        let batch = idx.search_batch(&[vec![1.0, 0.0]], 3).unwrap();
        assert_eq!(batch[0], hits);
    }

    #[test]
    fn query_dimension_is_checked() {
        assert!(matches!(small().search(&[1.0, 0.0], 1), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn vec_file_layout() {
        let rows = vec![vec![1.0f32, -2.0], vec![0.5, 0.25]];
        let mut buf = Vec::new();
        write_vec_file(&mut buf, &rows).unwrap();
        assert_eq!(&buf[..4], b"VEC1");
        assert_eq!(&buf[4..12], &[2, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&buf[12..16], &1.0f32.to_le_bytes());
        assert_eq!(buf.len(), 12 + 16);
        assert_eq!(read_vec_file(&buf[..]).unwrap(), rows);
        assert!(read_vec_file(&buf[..20]).is_err());
    }
}
