//! Compressed-row sparse matrices.
//!
//! The sparsity pattern is split from the values so one pattern can be shared
//! across every image of a given shape while the values (which depend on the
//! learned edge weights) change per sample.

use std::sync::Arc;

use crate::error::{GraphError, TensorError};
use crate::tensor::{Scalar, Shape, Tensor};

/// Row offsets and column indices of a CSR matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CsrPattern {
    rows: usize,
    cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
}

impl CsrPattern {
    pub fn new(
        rows: usize,
        cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
    ) -> Result<Self, String> {
        if row_offsets.len() != rows + 1 {
            return Err(format!(
                "row_offsets has length {}, expected {}",
                row_offsets.len(),
                rows + 1
            ));
        }
        if row_offsets[0] != 0 || row_offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err("row_offsets must start at 0 and be nondecreasing".into());
        }
        if row_offsets[rows] != col_indices.len() {
            return Err(format!(
                "final row offset {} != nnz {}",
                row_offsets[rows],
                col_indices.len()
            ));
        }
        if let Some(&c) = col_indices.iter().find(|&&c| c >= cols) {
            return Err(format!("column index {c} out of range for {cols} columns"));
        }
        Ok(CsrPattern {
            rows,
            cols,
            row_offsets,
            col_indices,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    /// Range of nonzero slots belonging to row `i`.
    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        self.row_offsets[i]..self.row_offsets[i + 1]
    }
}

/// CSR matrix: a shared pattern plus one value per nonzero.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix<T> {
    pattern: Arc<CsrPattern>,
    values: Vec<T>,
}

impl<T: Scalar> SparseMatrix<T> {
    pub fn new(pattern: Arc<CsrPattern>, values: Vec<T>) -> Result<Self, TensorError> {
        if values.len() != pattern.nnz() {
            return Err(TensorError::DataLength {
                shape: Shape::Vector(pattern.nnz()),
                len: values.len(),
            });
        }
        Ok(SparseMatrix { pattern, values })
    }

    pub fn identity(n: usize) -> Self {
        let pattern = CsrPattern {
            rows: n,
            cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
        };
        SparseMatrix {
            pattern: Arc::new(pattern),
            values: vec![T::one(); n],
        }
    }

    /// Builds from `(row, col, value)` triplets; duplicates are summed and
    /// columns end up sorted within each row.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, T)]) -> Result<Self, String> {
        let mut sorted: Vec<(usize, usize, T)> = triplets.to_vec();
        sorted.sort_by_key(|a| (a.0, a.1));
        let mut row_offsets = vec![0usize; rows + 1];
        let mut col_indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<T> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, v) in &sorted {
            if r >= rows || c >= cols {
                return Err(format!("entry ({r}, {c}) outside {rows}x{cols}"));
            }
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            last = Some((r, c));
            row_offsets[r + 1] += 1;
            col_indices.push(c);
            values.push(v);
        }
        for i in 0..rows {
            row_offsets[i + 1] += row_offsets[i];
        }
        let pattern = CsrPattern::new(rows, cols, row_offsets, col_indices)?;
        Ok(SparseMatrix {
            pattern: Arc::new(pattern),
            values,
        })
    }

    pub fn pattern(&self) -> &Arc<CsrPattern> {
        &self.pattern
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn rows(&self) -> usize {
        self.pattern.rows
    }

    pub fn cols(&self) -> usize {
        self.pattern.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Entry `(i, j)`, zero when not stored.
    pub fn get(&self, i: usize, j: usize) -> T {
        self.pattern
            .row_range(i)
            .find(|&k| self.pattern.col_indices[k] == j)
            .map_or(T::zero(), |k| self.values[k])
    }

    pub fn to_dense(&self) -> Tensor<T> {
        let (r, c) = (self.rows(), self.cols());
        let mut out = Tensor::zeros(Shape::Matrix(r, c));
        let data = out.data_mut();
        for i in 0..r {
            for k in self.pattern.row_range(i) {
                data[i * c + self.pattern.col_indices[k]] += self.values[k];
            }
        }
        out
    }

    /// Sparse × dense product.
    pub fn spmm(&self, x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        let (xr, f) = x.shape().as_matrix().ok_or(TensorError::DimensionMismatch {
            op: "spmm",
            left: Shape::Matrix(self.rows(), self.cols()),
            right: x.shape(),
        })?;
        if xr != self.cols() {
            return Err(TensorError::DimensionMismatch {
                op: "spmm",
                left: Shape::Matrix(self.rows(), self.cols()),
                right: x.shape(),
            });
        }
        let mut out = vec![T::zero(); self.rows() * f];
        spmm_kernel(&self.pattern, &self.values, x.data(), f, &mut out);
        Tensor::new(Shape::Matrix(self.rows(), f), out)
    }

    /// Relabels a square matrix: node `i` becomes `perm[i]`, giving `P·S·Pᵀ`.
    ///
    /// Entries keep their within-row order, so products against a permuted
    /// dense matrix perform the same floating-point operations per row.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.rows();
        assert_eq!(n, self.cols(), "permuted() needs a square matrix");
        assert_eq!(perm.len(), n);
        let mut inverse = vec![0; n];
        for (old, &new) in perm.iter().enumerate() {
            inverse[new] = old;
        }
        let mut row_offsets = Vec::with_capacity(n + 1);
        row_offsets.push(0);
        let mut col_indices = Vec::with_capacity(self.nnz());
        let mut values = Vec::with_capacity(self.nnz());
        for &old_row in &inverse {
            for k in self.pattern.row_range(old_row) {
                col_indices.push(perm[self.pattern.col_indices[k]]);
                values.push(self.values[k]);
            }
            row_offsets.push(col_indices.len());
        }
        SparseMatrix {
            pattern: Arc::new(CsrPattern {
                rows: n,
                cols: n,
                row_offsets,
                col_indices,
            }),
            values,
        }
    }
}

pub(crate) fn spmm_kernel<T: Scalar>(pattern: &CsrPattern, values: &[T], x: &[T], f: usize, out: &mut [T]) {
    for i in 0..pattern.rows {
        let out_row = &mut out[i * f..(i + 1) * f];
        for k in pattern.row_range(i) {
            let v = values[k];
            let j = pattern.col_indices[k];
            for (o, &xv) in out_row.iter_mut().zip(&x[j * f..(j + 1) * f]) {
                *o += v * xv;
            }
        }
    }
}

/// Maps per-edge weights of an undirected graph onto the nonzeros of the
/// self-looped, symmetrically normalized adjacency `D̃^{-1/2}(A_w + I)D̃^{-1/2}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NormalizationLayout {
    edges: Vec<(usize, usize)>,
    pattern: Arc<CsrPattern>,
    /// Edge index for each nonzero, `None` on the diagonal.
    entry_edge: Vec<Option<usize>>,
}

impl NormalizationLayout {
    /// `edges` must be undirected pairs without self-loops or duplicates.
    pub fn new(n_nodes: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        let mut entries: Vec<(usize, usize, Option<usize>)> = Vec::with_capacity(n_nodes + 2 * edges.len());
        for i in 0..n_nodes {
            entries.push((i, i, None));
        }
        for (e, &(i, j)) in edges.iter().enumerate() {
            if i >= n_nodes || j >= n_nodes || i == j {
                return Err(GraphError::EdgeOutOfRange(i, j));
            }
            entries.push((i, j, Some(e)));
            entries.push((j, i, Some(e)));
        }
        entries.sort_by_key(|a| (a.0, a.1));
        if entries.windows(2).any(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
            let dup = entries
                .windows(2)
                .find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1))
                .unwrap();
            return Err(GraphError::EdgeOutOfRange(dup[0].0, dup[0].1));
        }
        let mut row_offsets = vec![0usize; n_nodes + 1];
        for &(r, _, _) in &entries {
            row_offsets[r + 1] += 1;
        }
        for i in 0..n_nodes {
            row_offsets[i + 1] += row_offsets[i];
        }
        let col_indices = entries.iter().map(|e| e.1).collect();
        let entry_edge = entries.iter().map(|e| e.2).collect();
        let pattern = CsrPattern::new(n_nodes, n_nodes, row_offsets, col_indices)
            .expect("normalization pattern is well formed by construction");
        Ok(NormalizationLayout {
            edges: edges.to_vec(),
            pattern: Arc::new(pattern),
            entry_edge,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.pattern.rows
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn pattern(&self) -> &Arc<CsrPattern> {
        &self.pattern
    }

    /// Degrees of `Ã = A_w + I` (`None` means every weight is 1).
    pub fn degrees<T: Scalar>(&self, weights: Option<&[T]>) -> Vec<T> {
        let mut deg = vec![T::one(); self.n_nodes()];
        for (e, &(i, j)) in self.edges.iter().enumerate() {
            let w = weights.map_or(T::one(), |w| w[e]);
            deg[i] += w;
            deg[j] += w;
        }
        deg
    }

    /// Normalized nonzero values for the given degrees.
    pub fn values<T: Scalar>(&self, weights: Option<&[T]>, degrees: &[T]) -> Vec<T> {
        let inv_sqrt: Vec<T> = degrees.iter().map(|d| d.sqrt().recip()).collect();
        let mut values = Vec::with_capacity(self.pattern.nnz());
        for i in 0..self.n_nodes() {
            for k in self.pattern.row_range(i) {
                let j = self.pattern.col_indices[k];
                let a = match self.entry_edge[k] {
                    None => T::one(),
                    Some(e) => weights.map_or(T::one(), |w| w[e]),
                };
                values.push(a * (inv_sqrt[i] * inv_sqrt[j]));
            }
        }
        values
    }

    /// Gradient with respect to the edge weights, given the gradient with
    /// respect to the normalized values.
    pub(crate) fn backward<T: Scalar>(&self, degrees: &[T], values: &[T], d_values: &[T], d_weights: &mut [T]) {
        let half = T::from_f64(0.5);
        let inv_sqrt: Vec<T> = degrees.iter().map(|d| d.sqrt().recip()).collect();
        let mut d_degree = vec![T::zero(); self.n_nodes()];
        for i in 0..self.n_nodes() {
            for k in self.pattern.row_range(i) {
                let j = self.pattern.col_indices[k];
                let g = d_values[k];
                if g == T::zero() {
                    continue;
                }
                // value = a / sqrt(d_i d_j)
                let v = values[k];
                d_degree[i] -= half * g * v / degrees[i];
                d_degree[j] -= half * g * v / degrees[j];
                if let Some(e) = self.entry_edge[k] {
                    d_weights[e] += g * (inv_sqrt[i] * inv_sqrt[j]);
                }
            }
        }
        for (e, &(i, j)) in self.edges.iter().enumerate() {
            d_weights[e] += d_degree[i] + d_degree[j];
        }
    }
}
