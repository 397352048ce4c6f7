//! Conjugate gradients, the iterative fallback for SPD solves.

use super::{axpy, dot, norm2, LinalgError, SparseMatrix};

/// Unpreconditioned CG with a relative residual stopping test.
pub fn cg_solve(
    a: &SparseMatrix,
    b: &[f64],
    rel_tol: f64,
    max_iters: usize,
) -> Result<Vec<f64>, LinalgError> {
    let n = b.len();
    if a.n_rows() != n || a.n_cols() != n {
        return Err(LinalgError::DimensionMismatch(format!(
            "{}x{} matrix with rhs of length {n}",
            a.n_rows(),
            a.n_cols()
        )));
    }
    let b_norm = norm2(b);
    if b_norm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut ap = vec![0.0; n];
    for _ in 0..max_iters {
        a.matvec_into(&p, &mut ap);
        let alpha = rr / dot(&p, &ap);
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= rel_tol * b_norm {
            return Ok(x);
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
    }
    Err(LinalgError::CgStagnation {
        max_iters,
        residual: rr.sqrt() / b_norm,
    })
}
