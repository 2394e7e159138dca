//! Compressed sparse row matrices and edge segment structures.
//!
//! [`CsrMatrix`] stores constant sparse operands: normalized adjacencies,
//! mean-aggregation operators and sparse input features. [`EdgeSegments`]
//! describes per-node groups over a flat edge array (the CSR row structure on
//! its own) and drives the segmented softmax/reduce operations. [`EdgePairs`]
//! is the flat `(src, dst)` view of the same edge order used by the pairwise
//! kernel operations.

use std::sync::{Arc, OnceLock};

use crate::dense::DenseMatrix;
use crate::scalar::Scalar;

/// Per-node group boundaries over a flat edge array.
///
/// Group `i` covers `offsets[i]..offsets[i+1]`. Empty groups are allowed and
/// represent isolated nodes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeSegments {
    offsets: Vec<usize>,
}

impl EdgeSegments {
    pub fn new(offsets: Vec<usize>) -> Self {
        assert!(!offsets.is_empty(), "offsets must contain at least the leading 0");
        assert_eq!(offsets[0], 0, "offsets must start at 0");
        assert!(offsets.windows(2).all(|w| w[0] <= w[1]), "offsets must be non-decreasing");
        Self { offsets }
    }

    /// Builds boundaries from per-group element counts.
    pub fn from_counts(counts: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(counts.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for &c in counts {
            acc += c;
            offsets.push(acc);
        }
        Self { offsets }
    }

    #[inline]
    pub fn num_segments(&self) -> usize {
        self.offsets.len() - 1
    }

    #[inline]
    pub fn num_edges(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    #[inline]
    pub fn range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    #[inline]
    pub fn len_of(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }
}

/// Flat `(src, dst)` pairs aligned with an [`EdgeSegments`] edge order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgePairs {
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
}

impl EdgePairs {
    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }
}

/// Immutable CSR matrix with cached transpose.
///
/// Used as the constant left operand of sparse-dense products; gradients of
/// `spmm` flow through the cached transpose so the adjoint never materializes
/// a dense copy.
pub struct CsrMatrix<T> {
    rows: usize,
    cols: usize,
    offsets: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
    transposed: OnceLock<Arc<CsrMatrix<T>>>,
}

impl<T: Scalar> Clone for CsrMatrix<T> {
    fn clone(&self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            offsets: self.offsets.clone(),
            col_idx: self.col_idx.clone(),
            values: self.values.clone(),
            transposed: OnceLock::new(),
        }
    }
}

impl<T: Scalar> std::fmt::Debug for CsrMatrix<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "CsrMatrix<{}>({}x{}, nnz={})", T::NAME, self.rows, self.cols, self.nnz())
    }
}

impl<T: Scalar> CsrMatrix<T> {
    /// Builds from raw CSR arrays. Column indices must be in range; entries
    /// within a row must be strictly increasing by column.
    pub fn new(
        rows: usize,
        cols: usize,
        offsets: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<T>,
    ) -> Self {
        assert_eq!(offsets.len(), rows + 1, "offsets length must be rows+1");
        assert_eq!(offsets[0], 0);
        assert_eq!(*offsets.last().unwrap(), col_idx.len());
        assert_eq!(col_idx.len(), values.len());
        for r in 0..rows {
            let row = &col_idx[offsets[r]..offsets[r + 1]];
            assert!(
                row.windows(2).all(|w| w[0] < w[1]),
                "row {r}: column indices must be strictly increasing"
            );
            if let Some(&last) = row.last() {
                assert!(last < cols, "row {r}: column index {last} out of range for {cols} cols");
            }
        }
        Self { rows, cols, offsets, col_idx, values, transposed: OnceLock::new() }
    }

    /// Builds from unsorted triplets; duplicate positions are summed.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, T)]) -> Self {
        let mut sorted: Vec<(usize, usize, T)> = triplets.to_vec();
        sorted.sort_by_key(|&(r, c, _)| (r, c));
        let mut offsets = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values = Vec::with_capacity(sorted.len());
        for &(r, c, v) in &sorted {
            assert!(r < rows && c < cols, "triplet ({r},{c}) out of bounds {rows}x{cols}");
            if col_idx.len() > offsets[r] && offsets[r + 1] > offsets[r] && *col_idx.last().unwrap() == c
            {
                let last = values.len() - 1;
                values[last] += v;
            } else {
                col_idx.push(c);
                values.push(v);
            }
            offsets[r + 1] = col_idx.len();
        }
        // Rows without entries still hold the initial 0; raise them to the
        // running prefix so the offsets stay non-decreasing.
        for r in 0..rows {
            offsets[r + 1] = offsets[r + 1].max(offsets[r]);
        }
        Self::new(rows, cols, offsets, col_idx, values)
    }

    /// Converts a dense matrix, dropping exact zeros.
    pub fn from_dense(dense: &DenseMatrix<T>) -> Self {
        let (rows, cols) = dense.shape();
        let mut offsets = Vec::with_capacity(rows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        offsets.push(0);
        for r in 0..rows {
            for (c, &v) in dense.row(r).iter().enumerate() {
                if v != T::zero() {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            offsets.push(col_idx.len());
        }
        Self { rows, cols, offsets, col_idx, values, transposed: OnceLock::new() }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            offsets: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![T::one(); n],
            transposed: OnceLock::new(),
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_entries(&self, r: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let range = self.offsets[r]..self.offsets[r + 1];
        self.col_idx[range.clone()].iter().copied().zip(self.values[range].iter().copied())
    }

    pub fn density(&self) -> f64 {
        if self.rows * self.cols == 0 {
            0.0
        } else {
            self.nnz() as f64 / (self.rows * self.cols) as f64
        }
    }

    pub fn to_dense(&self) -> DenseMatrix<T> {
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for (c, v) in self.row_entries(r) {
                out.set(r, c, v);
            }
        }
        out
    }

    /// `self * dense`, row by row.
    pub fn spmm(&self, dense: &DenseMatrix<T>) -> DenseMatrix<T> {
        assert_eq!(
            self.cols,
            dense.rows(),
            "spmm: {}x{} * {:?} dimension mismatch",
            self.rows,
            self.cols,
            dense.shape()
        );
        let k = dense.cols();
        let mut out = DenseMatrix::zeros(self.rows, k);
        for r in 0..self.rows {
            let acc = out.row_mut(r);
            for (c, v) in self.row_entries(r) {
                for (o, &d) in acc.iter_mut().zip(dense.row(c)) {
                    *o += v * d;
                }
            }
        }
        out
    }

    /// Cached transpose, built on first use.
    pub fn transpose(&self) -> Arc<CsrMatrix<T>> {
        self.transposed
            .get_or_init(|| {
                let mut counts = vec![0usize; self.cols];
                for &c in &self.col_idx {
                    counts[c] += 1;
                }
                let mut offsets = vec![0usize; self.cols + 1];
                for c in 0..self.cols {
                    offsets[c + 1] = offsets[c] + counts[c];
                }
                let mut cursor = offsets.clone();
                let mut col_idx = vec![0usize; self.nnz()];
                let mut values = vec![T::zero(); self.nnz()];
                for r in 0..self.rows {
                    for (c, v) in self.row_entries(r) {
                        let slot = cursor[c];
                        col_idx[slot] = r;
                        values[slot] = v;
                        cursor[c] += 1;
                    }
                }
                Arc::new(CsrMatrix {
                    rows: self.cols,
                    cols: self.rows,
                    offsets,
                    col_idx,
                    values,
                    transposed: OnceLock::new(),
                })
            })
            .clone()
    }

    pub fn cast<U: Scalar>(&self) -> CsrMatrix<U> {
        CsrMatrix {
            rows: self.rows,
            cols: self.cols,
            offsets: self.offsets.clone(),
            col_idx: self.col_idx.clone(),
            values: self
                .values
                .iter()
                .map(|&v| U::from_f64(v.to_f64().expect("fits f64")).expect("cast"))
                .collect(),
            transposed: OnceLock::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_dense_round_trips() {
        let dense = DenseMatrix::from_vec(
            3,
            4,
            vec![0.0, 1.5, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0, -3.0, 0.0, 0.5, 0.0],
        );
        let sparse = CsrMatrix::from_dense(&dense);
        assert_eq!(sparse.nnz(), 4);
        assert!(sparse.to_dense().max_abs_diff(&dense) < 1e-15);
    }

    #[test]
    fn spmm_matches_dense_product() {
        let dense_a = DenseMatrix::from_fn(4, 5, |r, c| {
            if (r + c) % 3 == 0 {
                (r as f64 + 1.0) * 0.5 - c as f64 * 0.2
            } else {
                0.0
            }
        });
        let a = CsrMatrix::from_dense(&dense_a);
        let b = DenseMatrix::from_fn(5, 3, |r, c| (r as f64 - 1.5 * c as f64).sin());
        let got = a.spmm(&b);
        let want = dense_a.matmul(&b);
        assert!(got.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn transpose_matches_dense_transpose() {
        let dense = DenseMatrix::from_fn(3, 6, |r, c| if c % 2 == r % 2 { (r * 7 + c) as f64 } else { 0.0 });
        let sparse = CsrMatrix::from_dense(&dense);
        let t = sparse.transpose();
        assert!(t.to_dense().max_abs_diff(&dense.transpose()) < 1e-15);
        // Cached: same allocation handed out twice.
        assert!(Arc::ptr_eq(&t, &sparse.transpose()));
    }

    #[test]
    fn triplets_sum_duplicates() {
        let m = CsrMatrix::from_triplets(2, 2, &[(0, 1, 2.0), (1, 0, 1.0), (0, 1, 0.5)]);
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.to_dense().get(0, 1), 2.5);
    }

    #[test]
    fn identity_spmm_is_identity() {
        let b = DenseMatrix::from_fn(5, 2, |r, c| (r * 2 + c) as f64);
        let got = CsrMatrix::<f64>::identity(5).spmm(&b);
        assert!(got.max_abs_diff(&b) < 1e-15);
    }

    #[test]
    fn segments_ranges_and_counts() {
        let seg = EdgeSegments::from_counts(&[2, 0, 3]);
        assert_eq!(seg.num_segments(), 3);
        assert_eq!(seg.num_edges(), 5);
        assert_eq!(seg.range(0), 0..2);
        assert_eq!(seg.range(1), 2..2);
        assert_eq!(seg.range(2), 2..5);
        assert_eq!(seg.len_of(1), 0);
    }
}
