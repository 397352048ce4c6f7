//! Banded Cholesky factorization for SPD matrices.
//!
//! Matrices coming from the structured meshes used here have small bandwidth
//! under the natural node numbering, so a dense-band factorization is both
//! simple and fast at desk scale. The factor is immutable and can be shared
//! across threads for repeated solves.

use super::{LinalgError, SparseMatrix};
use crate::counters;

/// Lower-triangular Cholesky factor stored as a dense band.
///
/// Row `i` stores `L[i][j]` for `j` in `[i - bandwidth, i]` at band position
/// `j + bandwidth - i`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    n: usize,
    bandwidth: usize,
    band: Vec<f64>,
}

impl CholeskyFactor {
    pub fn new(a: &SparseMatrix) -> Result<Self, LinalgError> {
        if a.n_rows() != a.n_cols() {
            return Err(LinalgError::DimensionMismatch(format!(
                "cannot factor a {}x{} matrix",
                a.n_rows(),
                a.n_cols()
            )));
        }
        counters::record_factorization();
        let n = a.n_rows();
        let bw = a.bandwidth();
        let stride = bw + 1;
        let mut band = vec![0.0; n * stride];

        // copy the lower triangle of A into the band
        for i in 0..n {
            let (s, e) = (a.row_offsets()[i], a.row_offsets()[i + 1]);
            for k in s..e {
                let j = a.col_indices()[k];
                if j <= i {
                    band[i * stride + (j + bw - i)] = a.values()[k];
                }
            }
        }

        // in-place Cholesky-Banachiewicz restricted to the band
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let mut sum = band[i * stride + (j + bw - i)];
                let klo = lo.max(j.saturating_sub(bw));
                for k in klo..j {
                    sum -= band[i * stride + (k + bw - i)] * band[j * stride + (k + bw - j)];
                }
                if j < i {
                    band[i * stride + (j + bw - i)] = sum / band[j * stride + bw];
                } else {
                    if sum <= 0.0 || !sum.is_finite() {
                        return Err(LinalgError::NotPositiveDefinite { row: i, pivot: sum });
                    }
                    band[i * stride + bw] = sum.sqrt();
                }
            }
        }

        Ok(Self {
            n,
            bandwidth: bw,
            band,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Solve `A x = b` via forward/backward substitution.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let bw = self.bandwidth;
        let stride = bw + 1;
        let mut y = b.to_vec();
        // L y = b
        for i in 0..self.n {
            let lo = i.saturating_sub(bw);
            let mut sum = y[i];
            for j in lo..i {
                sum -= self.band[i * stride + (j + bw - i)] * y[j];
            }
            y[i] = sum / self.band[i * stride + bw];
        }
        // L^T x = y
        for i in (0..self.n).rev() {
            let hi = (i + bw).min(self.n - 1);
            let mut sum = y[i];
            for j in (i + 1)..=hi {
                sum -= self.band[j * stride + (i + bw - j)] * y[j];
            }
            y[i] = sum / self.band[i * stride + bw];
        }
        y
    }
}
