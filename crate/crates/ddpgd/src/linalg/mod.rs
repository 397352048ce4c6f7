//! Minimal sparse linear algebra: CSR storage, direct/iterative SPD solves,
//! dense small-matrix utilities and a matrix-free GMRES.
//!
//! Everything here operates on plain `f64` slices and owned vectors. Matrices
//! are immutable after construction; factorizations are shareable read-only
//! objects, so all solves can run concurrently.

mod cg;
mod cholesky;
pub mod dense;
mod gmres;

pub use cg::cg_solve;
pub use cholesky::CholeskyFactor;
pub use gmres::{gmres, GmresConfig, GmresResult};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {pivot:.3e} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("GMRES breakdown after {iters} iterations (Arnoldi norm {norm:.3e})")]
    Breakdown {
        iters: usize,
        norm: f64,
        residual_history: Vec<f64>,
    },
    #[error("CG stagnated: residual {residual:.3e} after {max_iters} iterations")]
    CgStagnation { max_iters: usize, residual: f64 },
    #[error("singular dense matrix (pivot {pivot:.3e} at column {col})")]
    SingularDense { col: usize, pivot: f64 },
}

/// Sparse matrix in compressed sparse row format.
///
/// `row_offsets` has length `n_rows + 1`; the column indices of row `i` are
/// `col_indices[row_offsets[i]..row_offsets[i+1]]`, sorted ascending with no
/// duplicates. Explicit zeros are kept so that matrices assembled over the
/// same mesh share a sparsity pattern and can be combined entrywise.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Build from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Self {
        let mut entries: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        for &(r, c, _) in &entries {
            assert!(r < n_rows && c < n_cols, "triplet ({r},{c}) out of bounds");
        }
        entries.sort_unstable_by_key(|&(r, c, _)| (r, c));

        let mut row_offsets = vec![0usize; n_rows + 1];
        let mut col_indices = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        for &(r, c, v) in &entries {
            col_indices.push(c);
            values.push(v);
            row_offsets[r + 1] += 1;
        }
        for i in 0..n_rows {
            row_offsets[i + 1] += row_offsets[i];
        }
        let mut m = Self {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        };
        m.merge_sorted_duplicates();
        m
    }

    fn merge_sorted_duplicates(&mut self) {
        let mut new_offsets = vec![0usize; self.n_rows + 1];
        let mut new_cols = Vec::with_capacity(self.col_indices.len());
        let mut new_vals = Vec::with_capacity(self.values.len());
        for i in 0..self.n_rows {
            let (s, e) = (self.row_offsets[i], self.row_offsets[i + 1]);
            let mut j = s;
            while j < e {
                let c = self.col_indices[j];
                let mut v = self.values[j];
                let mut k = j + 1;
                while k < e && self.col_indices[k] == c {
                    v += self.values[k];
                    k += 1;
                }
                new_cols.push(c);
                new_vals.push(v);
                j = k;
            }
            new_offsets[i + 1] = new_cols.len();
        }
        self.row_offsets = new_offsets;
        self.col_indices = new_cols;
        self.values = new_vals;
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Entry (i, j), zero if not stored.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (s, e) = (self.row_offsets[i], self.row_offsets[i + 1]);
        match self.col_indices[s..e].binary_search(&j) {
            Ok(k) => self.values[s + k],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n_cols);
        assert_eq!(y.len(), self.n_rows);
        for i in 0..self.n_rows {
            let mut acc = 0.0;
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                acc += self.values[k] * x[self.col_indices[k]];
            }
            y[i] = acc;
        }
    }

    /// Largest |i - j| over stored entries.
    pub fn bandwidth(&self) -> usize {
        let mut bw = 0usize;
        for i in 0..self.n_rows {
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                let j = self.col_indices[k];
                bw = bw.max(i.abs_diff(j));
            }
        }
        bw
    }

    /// Checks (i,j) == (j,i) for all stored entries.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.n_rows != self.n_cols {
            return false;
        }
        for i in 0..self.n_rows {
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                let j = self.col_indices[k];
                if (self.values[k] - self.get(j, i)).abs() > tol {
                    return false;
                }
            }
        }
        true
    }

    /// True when `other` has identical row offsets and column indices.
    pub fn same_pattern(&self, other: &Self) -> bool {
        self.n_rows == other.n_rows
            && self.n_cols == other.n_cols
            && self.row_offsets == other.row_offsets
            && self.col_indices == other.col_indices
    }

    /// `sum_k coeffs[k] * mats[k]` for matrices sharing one sparsity pattern.
    pub fn combine(mats: &[&SparseMatrix], coeffs: &[f64]) -> SparseMatrix {
        assert_eq!(mats.len(), coeffs.len());
        assert!(!mats.is_empty());
        let mut out = mats[0].clone();
        out.set_combination(mats, coeffs);
        out
    }

    /// In-place variant of [`SparseMatrix::combine`]; `self` must share the pattern.
    pub fn set_combination(&mut self, mats: &[&SparseMatrix], coeffs: &[f64]) {
        assert_eq!(mats.len(), coeffs.len());
        for m in mats {
            assert!(self.same_pattern(m), "pattern mismatch in combination");
        }
        for v in self.values.iter_mut() {
            *v = 0.0;
        }
        for (m, &c) in mats.iter().zip(coeffs) {
            for (v, mv) in self.values.iter_mut().zip(&m.values) {
                *v += c * mv;
            }
        }
    }

    /// Extract the submatrix with the given rows and columns (in the given
    /// order). Indices must be strictly increasing.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> SparseMatrix {
        debug_assert!(rows.windows(2).all(|w| w[0] < w[1]));
        debug_assert!(cols.windows(2).all(|w| w[0] < w[1]));
        let mut col_map = vec![usize::MAX; self.n_cols];
        for (new, &old) in cols.iter().enumerate() {
            col_map[old] = new;
        }
        let mut row_offsets = Vec::with_capacity(rows.len() + 1);
        row_offsets.push(0);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        for &r in rows {
            for k in self.row_offsets[r]..self.row_offsets[r + 1] {
                let c = col_map[self.col_indices[k]];
                if c != usize::MAX {
                    col_indices.push(c);
                    values.push(self.values[k]);
                }
            }
            row_offsets.push(col_indices.len());
        }
        SparseMatrix {
            n_rows: rows.len(),
            n_cols: cols.len(),
            row_offsets,
            col_indices,
            values,
        }
    }

    /// Dense copy, for small oracles and debugging.
    pub fn to_dense(&self) -> dense::Mat {
        let mut m = dense::Mat::zeros(self.n_rows, self.n_cols);
        for i in 0..self.n_rows {
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                m[(i, self.col_indices[k])] = self.values[k];
            }
        }
        m
    }
}

/// Direct solve of an SPD system via banded Cholesky.
///
/// The factorization is recomputed on every call; use [`CholeskyFactor`]
/// directly when the same operator is solved repeatedly.
pub fn spd_solve(a: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    if a.n_rows() != b.len() || a.n_rows() != a.n_cols() {
        return Err(LinalgError::DimensionMismatch(format!(
            "{}x{} matrix with rhs of length {}",
            a.n_rows(),
            a.n_cols(),
            b.len()
        )));
    }
    let factor = CholeskyFactor::new(a)?;
    Ok(factor.solve(b))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, &x| m.max(x.abs()))
}

/// y <- y + alpha * x
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
