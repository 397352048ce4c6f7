//! Matrix-free GMRES.
//!
//! The operator is any closure mapping a vector to a vector; nothing about
//! the matrix is ever formed. Orthogonalization is modified Gram-Schmidt
//! with one reorthogonalization pass, and the least-squares problem is
//! updated with Givens rotations so the residual norm is available at every
//! iteration.

use super::{axpy, dot, norm2, LinalgError};

#[derive(Debug, Clone)]
pub struct GmresConfig {
    /// Stopping tolerance on `||b - A x|| / ||b||`.
    pub rel_tol: f64,
    /// Total Arnoldi steps allowed across restart cycles.
    pub max_iters: usize,
    /// Krylov dimension per cycle; `None` means full GMRES (no restart).
    pub restart: Option<usize>,
}

impl Default for GmresConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-6,
            max_iters: 500,
            restart: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GmresResult {
    pub x: Vec<f64>,
    pub iters: usize,
    /// Relative residual after each Arnoldi step.
    pub residual_history: Vec<f64>,
    pub converged: bool,
}

/// Solve `A x = b` where `apply` computes `A v`.
pub fn gmres<F>(mut apply: F, b: &[f64], cfg: &GmresConfig) -> Result<GmresResult, LinalgError>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    assert!(cfg.rel_tol > 0.0, "rel_tol must be positive");
    assert!(cfg.max_iters >= 1, "max_iters must be at least 1");
    let n = b.len();
    let b_norm = norm2(b);
    if b_norm == 0.0 {
        return Ok(GmresResult {
            x: vec![0.0; n],
            iters: 0,
            residual_history: Vec::new(),
            converged: true,
        });
    }

    let mut x = vec![0.0; n];
    let mut history = Vec::new();
    let mut total_iters = 0usize;

    loop {
        let cycle = cfg
            .restart
            .unwrap_or(cfg.max_iters)
            .min(cfg.max_iters - total_iters)
            .min(n);
        // residual of the current iterate
        let mut r = b.to_vec();
        if total_iters > 0 {
            let ax = apply(&x);
            axpy(-1.0, &ax, &mut r);
        }
        let beta = norm2(&r);
        if beta <= cfg.rel_tol * b_norm {
            return Ok(GmresResult {
                x,
                iters: total_iters,
                residual_history: history,
                converged: true,
            });
        }

        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(cycle + 1);
        basis.push(r.iter().map(|v| v / beta).collect());
        let mut h = vec![vec![0.0f64; cycle]; cycle + 1];
        let mut g = vec![0.0f64; cycle + 1];
        g[0] = beta;
        let mut cs = vec![0.0f64; cycle];
        let mut sn = vec![0.0f64; cycle];

        let mut k = 0usize; // Arnoldi steps completed this cycle
        let mut broke_down: Option<f64> = None;
        while k < cycle {
            let mut w = apply(&basis[k]);
            // modified Gram-Schmidt with one reorthogonalization pass
            for _pass in 0..2 {
                for (i, v) in basis.iter().enumerate() {
                    let hik = dot(v, &w);
                    h[i][k] += hik;
                    axpy(-hik, v, &mut w);
                }
            }
            let w_norm = norm2(&w);
            h[k + 1][k] = w_norm;

            // rotate the new Hessenberg column
            for i in 0..k {
                let t = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                h[i][k] = t;
            }
            let (c, s) = givens(h[k][k], h[k + 1][k]);
            cs[k] = c;
            sn[k] = s;
            h[k][k] = c * h[k][k] + s * h[k + 1][k];
            h[k + 1][k] = 0.0;
            // a vanishing rotated pivot means the operator annihilated the
            // whole column: the least-squares recurrence is no longer valid
            if h[k][k] == 0.0 {
                broke_down = Some(w_norm);
                break;
            }
            let t = c * g[k] + s * g[k + 1];
            g[k + 1] = -s * g[k] + c * g[k + 1];
            g[k] = t;

            k += 1;
            total_iters += 1;
            let rel = g[k].abs() / b_norm;
            history.push(rel);

            if rel <= cfg.rel_tol {
                break;
            }
            if w_norm <= f64::EPSILON * beta {
                broke_down = Some(w_norm);
                break;
            }
            if k < cycle {
                basis.push(w.iter().map(|v| v / w_norm).collect());
            }
        }

        if let Some(norm) = broke_down {
            return Err(LinalgError::Breakdown {
                iters: total_iters,
                norm,
                residual_history: history,
            });
        }

        // back substitution: y = H^{-1} g, then x += V y
        let mut y = vec![0.0f64; k];
        for i in (0..k).rev() {
            let mut sum = g[i];
            for j in (i + 1)..k {
                sum -= h[i][j] * y[j];
            }
            y[i] = sum / h[i][i];
        }
        for (j, yj) in y.iter().enumerate() {
            axpy(*yj, &basis[j], &mut x);
        }

        let converged = g[k].abs() <= cfg.rel_tol * b_norm;
        if converged {
            return Ok(GmresResult {
                x,
                iters: total_iters,
                residual_history: history,
                converged: true,
            });
        }
        if total_iters >= cfg.max_iters {
            return Ok(GmresResult {
                x,
                iters: total_iters,
                residual_history: history,
                converged: false,
            });
        }
        // otherwise: restart cycle
    }
}

fn givens(a: f64, b: f64) -> (f64, f64) {
    let r = a.hypot(b);
    if r == 0.0 {
        (1.0, 0.0)
    } else {
        (a / r, b / r)
    }
}
