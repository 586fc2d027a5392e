//! Compressed-row sparse matrix used for every Q, A and Aᵀ in the crate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Immutable sparse real matrix in compressed-row layout.
///
/// Built from triplets: duplicates are summed and exact zeros dropped, so a
/// canonical matrix never stores the same `(row, col)` twice. Column indices
/// are sorted within each row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    /// Canonicalizing constructor.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();
        for (r, c, v) in triplets {
            if r >= n_rows || c >= n_cols {
                return Err(Error::IndexOutOfRange {
                    row: r,
                    col: c,
                    n_rows,
                    n_cols,
                });
            }
            entries.push((r, c, v));
        }
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut vals = Vec::with_capacity(entries.len());
        let mut rows = Vec::with_capacity(entries.len());
        let mut iter = entries.into_iter().peekable();
        while let Some((r, c, mut v)) = iter.next() {
            while let Some(&(r2, c2, v2)) = iter.peek() {
                if r2 == r && c2 == c {
                    v += v2;
                    iter.next();
                } else {
                    break;
                }
            }
            if v != 0.0 {
                rows.push(r);
                col_idx.push(c);
                vals.push(v);
            }
        }
        for &r in &rows {
            row_ptr[r + 1] += 1;
        }
        for i in 0..n_rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            vals,
        })
    }

    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            row_ptr: vec![0; n_rows + 1],
            col_idx: Vec::new(),
            vals: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let n = d.len();
        Self::from_triplets(n, n, d.iter().enumerate().map(|(i, &v)| (i, i, v)))
            .expect("diagonal indices are in range")
    }

    /// Builds from a dense row-major table; zeros are not stored.
    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != n_cols) {
            return Err(Error::DimensionMismatch {
                what: format!("dense row {bad}"),
                expected: n_cols,
                found: rows[bad].len(),
            });
        }
        Self::from_triplets(
            n_rows,
            n_cols,
            rows.iter()
                .enumerate()
                .flat_map(|(i, r)| r.iter().enumerate().map(move |(j, &v)| (i, j, v))),
        )
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Column indices and values of one row.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.col_idx[span.clone()], &self.vals[span])
    }

    pub fn row_nnz(&self, r: usize) -> usize {
        self.row_ptr[r + 1] - self.row_ptr[r]
    }

    /// Number of stored entries in each column.
    pub fn col_nnz(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_cols];
        for &c in &self.col_idx {
            counts[c] += 1;
        }
        counts
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        cols.binary_search(&c).map_or(0.0, |k| vals[k])
    }

    /// Iterates stored entries as `(row, col, value)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.vals
    }

    pub fn transpose(&self) -> Self {
        Self::from_triplets(self.n_cols, self.n_rows, self.iter().map(|(r, c, v)| (c, r, v)))
            .expect("transposed indices are in range")
    }

    /// Sparse matrix-vector product `m·x`.
    pub fn spmv(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_cols {
            return Err(Error::DimensionMismatch {
                what: "spmv input".into(),
                expected: self.n_cols,
                found: x.len(),
            });
        }
        let mut y = vec![0.0; self.n_rows];
        self.spmv_into(x, &mut y);
        Ok(y)
    }

    /// Unchecked product into a preallocated buffer. Lengths must agree.
    pub fn spmv_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        debug_assert_eq!(y.len(), self.n_rows);
        for (r, out) in y.iter_mut().enumerate() {
            let span = self.row_ptr[r]..self.row_ptr[r + 1];
            *out = self.col_idx[span.clone()]
                .iter()
                .zip(&self.vals[span])
                .map(|(&c, &v)| v * x[c])
                .sum();
        }
    }

    /// Returns `diag(row_scale) · self · diag(col_scale)`; the pattern is unchanged.
    pub fn scale(&self, row_scale: &[f64], col_scale: &[f64]) -> Self {
        assert_eq!(row_scale.len(), self.n_rows);
        assert_eq!(col_scale.len(), self.n_cols);
        let mut out = self.clone();
        for r in 0..self.n_rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                out.vals[k] *= row_scale[r] * col_scale[self.col_idx[k]];
            }
        }
        out
    }

    /// Applies `f` to every stored value, keeping the stored pattern (including
    /// any values mapped to zero).
    pub fn map_values(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> Self {
        let mut out = self.clone();
        for r in 0..self.n_rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                out.vals[k] = f(r, self.col_idx[k], self.vals[k]);
            }
        }
        out
    }

    pub fn row_inf_norms(&self) -> Vec<f64> {
        (0..self.n_rows)
            .map(|r| self.row(r).1.iter().fold(0.0f64, |m, v| m.max(v.abs())))
            .collect()
    }

    pub fn col_inf_norms(&self) -> Vec<f64> {
        let mut norms = vec![0.0f64; self.n_cols];
        for (&c, &v) in self.col_idx.iter().zip(&self.vals) {
            norms[c] = norms[c].max(v.abs());
        }
        norms
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.vals.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n_cols]; self.n_rows];
        for (r, c, v) in self.iter() {
            d[r][c] = v;
        }
        d
    }

    /// Entry pairs `(i, j)`, `i <= j`, where `m[i][j]` and `m[j][i]` differ by
    /// more than `rel_tol · max(|m[i][j]|, |m[j][i]|)`. Empty for non-square input.
    pub fn asymmetric_pairs(&self, rel_tol: f64) -> Vec<(usize, usize)> {
        if self.n_rows != self.n_cols {
            return Vec::new();
        }
        let mut bad = Vec::new();
        for (r, c, v) in self.iter() {
            let mirrored = self.get(c, r);
            let scale = v.abs().max(mirrored.abs());
            if (v - mirrored).abs() > rel_tol * scale {
                let pair = (r.min(c), r.max(c));
                if !bad.contains(&pair) {
                    bad.push(pair);
                }
            }
        }
        bad.sort_unstable();
        bad
    }

    /// Same shape and nonzero positions; values may differ.
    pub fn same_pattern(&self, other: &Self) -> bool {
        self.n_rows == other.n_rows
            && self.n_cols == other.n_cols
            && self.row_ptr == other.row_ptr
            && self.col_idx == other.col_idx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed_and_zeros_dropped() {
        let m =
            SparseMatrix::from_triplets(2, 2, [(0, 0, 1.0), (0, 0, 2.0), (1, 1, 1.0), (1, 1, -1.0)])
                .unwrap();
        assert_eq!(m.nnz(), 1);
        assert_eq!(m.get(0, 0), 3.0);
        assert_eq!(m.get(1, 1), 0.0);
    }

    #[test]
    fn out_of_range_index_is_rejected() {
        let err = SparseMatrix::from_triplets(2, 2, [(2, 0, 1.0)]).unwrap_err();
        assert!(matches!(err, Error::IndexOutOfRange { row: 2, .. }));
    }

    #[test]
    fn spmv_examples() {
        let eye = SparseMatrix::identity(3);
        assert_eq!(eye.spmv(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);

        let d = SparseMatrix::from_dense(&[vec![2.0, 0.0], vec![0.0, 2.0]]).unwrap();
        assert_eq!(d.spmv(&[1.0, 2.0]).unwrap(), vec![2.0, 4.0]);

        let z = SparseMatrix::zeros(3, 2);
        assert_eq!(z.nnz(), 0);
        assert_eq!(z.spmv(&[5.0, -1.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn spmv_dimension_mismatch() {
        let eye = SparseMatrix::identity(3);
        assert!(matches!(
            eye.spmv(&[1.0]),
            Err(Error::DimensionMismatch { expected: 3, found: 1, .. })
        ));
    }

    #[test]
    fn transpose_and_norms() {
        let m = SparseMatrix::from_dense(&[vec![1.0, -4.0, 0.0], vec![0.0, 2.0, 3.0]]).unwrap();
        let t = m.transpose();
        assert_eq!(t.n_rows(), 3);
        assert_eq!(t.get(1, 0), -4.0);
        assert_eq!(m.row_inf_norms(), vec![4.0, 3.0]);
        assert_eq!(m.col_inf_norms(), vec![1.0, 4.0, 3.0]);
        assert_eq!(m.col_nnz(), vec![1, 2, 1]);
    }

    #[test]
    fn asymmetry_detection() {
        let m = SparseMatrix::from_dense(&[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(m.asymmetric_pairs(1e-9), vec![(0, 1)]);
        let s = SparseMatrix::from_dense(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(s.asymmetric_pairs(1e-9).is_empty());
    }
}
