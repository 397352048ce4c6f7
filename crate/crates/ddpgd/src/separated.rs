//! Separated (PGD) representation of parametric fields.
//!
//! A [`SeparatedTensor`] is a sum of modes, each the product of one spatial
//! nodal vector and one discrete function per parametric axis:
//!
//! `u(x, mu) = sum_m V_m(x) * prod_p phi_m^p(mu^p)`
//!
//! Parametric functions live on uniform collocation grids; evaluation off
//! the collocation points interpolates linearly per axis. Tensors are
//! immutable values: all operations return new tensors.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SeparatedError {
    #[error("invalid parametric grid: {0}")]
    InvalidGrid(String),
    #[error("parameter {value} outside axis `{axis}` range [{lower}, {upper}]")]
    OutOfDomain {
        axis: String,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// One uniformly discretized parametric axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamAxis {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub step: f64,
    points: Vec<f64>,
}

impl ParamAxis {
    pub fn new(name: impl Into<String>, lower: f64, upper: f64, step: f64) -> Result<Self, SeparatedError> {
        let name = name.into();
        if !(upper > lower) || !(step > 0.0) {
            return Err(SeparatedError::InvalidGrid(format!(
                "axis `{name}`: need lower < upper and step > 0"
            )));
        }
        let span = upper - lower;
        let n_steps = (span / step).round();
        if n_steps < 1.0 || ((n_steps * step - span) / span).abs() > 1e-8 {
            return Err(SeparatedError::InvalidGrid(format!(
                "axis `{name}`: step {step} does not divide [{lower}, {upper}]"
            )));
        }
        let n_steps = n_steps as usize;
        let mut points: Vec<f64> = (0..n_steps).map(|i| lower + i as f64 * step).collect();
        points.push(upper);
        Ok(Self {
            name,
            lower,
            upper,
            step,
            points,
        })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn n_points(&self) -> usize {
        self.points.len()
    }

    pub fn contains(&self, v: f64) -> bool {
        let slack = 1e-12 * (self.upper - self.lower);
        v >= self.lower - slack && v <= self.upper + slack
    }

    /// Interpolation stencil `(i, w)` such that `f(v) ~ (1-w) f_i + w f_{i+1}`
    /// (with `w = 0` and `i` exact when `v` is a grid point).
    fn locate(&self, v: f64) -> Result<(usize, f64), SeparatedError> {
        if !self.contains(v) {
            return Err(SeparatedError::OutOfDomain {
                axis: self.name.clone(),
                value: v,
                lower: self.lower,
                upper: self.upper,
            });
        }
        let nearest = ((v - self.lower) / self.step).round() as usize;
        let nearest = nearest.min(self.points.len() - 1);
        if self.points[nearest] == v {
            return Ok((nearest, 0.0));
        }
        let i = (((v - self.lower) / self.step).floor() as usize).min(self.points.len() - 2);
        let w = (v - self.points[i]) / (self.points[i + 1] - self.points[i]);
        Ok((i, w.clamp(0.0, 1.0)))
    }

    /// Trapezoidal quadrature weights (including the step factor).
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let n = self.points.len();
        let mut w = vec![self.step; n];
        w[0] *= 0.5;
        w[n - 1] *= 0.5;
        w
    }
}

/// Cartesian product of parametric axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGrid {
    axes: Vec<ParamAxis>,
}

impl ParamGrid {
    pub fn new(axes: Vec<ParamAxis>) -> Result<Self, SeparatedError> {
        if axes.is_empty() {
            return Err(SeparatedError::InvalidGrid("grid needs at least one axis".into()));
        }
        for pair in axes.windows(2) {
            if pair[0].name == pair[1].name {
                return Err(SeparatedError::InvalidGrid(format!(
                    "duplicate axis name `{}`",
                    pair[0].name
                )));
            }
        }
        Ok(Self { axes })
    }

    pub fn axes(&self) -> &[ParamAxis] {
        &self.axes
    }

    pub fn n_axes(&self) -> usize {
        self.axes.len()
    }

    pub fn axis_named(&self, name: &str) -> Option<&ParamAxis> {
        self.axes.iter().find(|a| a.name == name)
    }

    pub fn contains(&self, mu: &[f64]) -> bool {
        mu.len() == self.axes.len() && mu.iter().zip(&self.axes).all(|(&v, a)| a.contains(v))
    }
}

/// One rank-one term: a spatial vector times one discrete parametric
/// function per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Mode {
    pub spatial: Vec<f64>,
    pub parametric: Vec<Vec<f64>>,
}

impl Mode {
    /// Scale parametric vectors to unit max-norm, carrying the amplitude on
    /// the spatial vector. Modes with an identically zero parametric factor
    /// become the zero mode.
    pub fn normalized(mut self) -> Mode {
        let mut amp = 1.0;
        for phi in &mut self.parametric {
            let m = phi.iter().fold(0.0f64, |acc, &v| acc.max(v.abs()));
            if m == 0.0 {
                for v in &mut self.spatial {
                    *v = 0.0;
                }
                return self;
            }
            for v in phi.iter_mut() {
                *v /= m;
            }
            amp *= m;
        }
        for v in &mut self.spatial {
            *v *= amp;
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparatedTensor {
    n_space: usize,
    grid: ParamGrid,
    modes: Vec<Mode>,
}

impl SeparatedTensor {
    /// The zero field (no modes).
    pub fn zero(n_space: usize, grid: ParamGrid) -> Self {
        Self {
            n_space,
            grid,
            modes: Vec::new(),
        }
    }

    pub fn new(n_space: usize, grid: ParamGrid, modes: Vec<Mode>) -> Result<Self, SeparatedError> {
        for (m, mode) in modes.iter().enumerate() {
            if mode.spatial.len() != n_space {
                return Err(SeparatedError::ShapeMismatch(format!(
                    "mode {m}: spatial length {} != {n_space}",
                    mode.spatial.len()
                )));
            }
            if mode.parametric.len() != grid.n_axes() {
                return Err(SeparatedError::ShapeMismatch(format!(
                    "mode {m}: {} parametric vectors for {} axes",
                    mode.parametric.len(),
                    grid.n_axes()
                )));
            }
            for (phi, axis) in mode.parametric.iter().zip(grid.axes()) {
                if phi.len() != axis.n_points() {
                    return Err(SeparatedError::ShapeMismatch(format!(
                        "mode {m}: parametric length {} != {} points of axis `{}`",
                        phi.len(),
                        axis.n_points(),
                        axis.name
                    )));
                }
            }
        }
        Ok(Self {
            n_space,
            grid,
            modes,
        })
    }

    pub fn n_space(&self) -> usize {
        self.n_space
    }

    pub fn grid(&self) -> &ParamGrid {
        &self.grid
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn rank(&self) -> usize {
        self.modes.len()
    }

    /// Nodal field at the parameter point `mu` (one value per grid axis, in
    /// axis order). Piecewise-linear interpolation between collocation
    /// points; exact at grid points. No extrapolation.
    pub fn evaluate(&self, mu: &[f64]) -> Result<Vec<f64>, SeparatedError> {
        if mu.len() != self.grid.n_axes() {
            return Err(SeparatedError::ShapeMismatch(format!(
                "{} parameter values for {} axes",
                mu.len(),
                self.grid.n_axes()
            )));
        }
        let stencils: Vec<(usize, f64)> = mu
            .iter()
            .zip(self.grid.axes())
            .map(|(&v, a)| a.locate(v))
            .collect::<Result<_, _>>()?;
        let mut out = vec![0.0; self.n_space];
        for mode in &self.modes {
            let mut factor = 1.0;
            for (phi, &(i, w)) in mode.parametric.iter().zip(&stencils) {
                factor *= if w == 0.0 {
                    phi[i]
                } else {
                    (1.0 - w) * phi[i] + w * phi[i + 1]
                };
            }
            if factor != 0.0 {
                crate::linalg::axpy(factor, &mode.spatial, &mut out);
            }
        }
        Ok(out)
    }

    /// Mode concatenation; evaluation is exactly the sum of the operands.
    pub fn add(&self, other: &SeparatedTensor) -> SeparatedTensor {
        assert_eq!(self.n_space, other.n_space, "spatial size mismatch");
        assert_eq!(self.grid, other.grid, "grid mismatch");
        let mut modes = self.modes.clone();
        modes.extend(other.modes.iter().cloned());
        SeparatedTensor {
            n_space: self.n_space,
            grid: self.grid.clone(),
            modes,
        }
    }

    /// Scale every spatial vector by `c`.
    pub fn scale(&self, c: f64) -> SeparatedTensor {
        let modes = self
            .modes
            .iter()
            .map(|m| Mode {
                spatial: m.spatial.iter().map(|v| c * v).collect(),
                parametric: m.parametric.clone(),
            })
            .collect();
        SeparatedTensor {
            n_space: self.n_space,
            grid: self.grid.clone(),
            modes,
        }
    }

    pub fn push_mode(&mut self, mode: Mode) {
        debug_assert_eq!(mode.spatial.len(), self.n_space);
        debug_assert_eq!(mode.parametric.len(), self.grid.n_axes());
        self.modes.push(mode);
    }

    pub fn prepend_mode(&mut self, mode: Mode) {
        debug_assert_eq!(mode.spatial.len(), self.n_space);
        self.modes.insert(0, mode);
    }

    /// Inner product in the discrete L2(space) x L2(grid) metric
    /// (trapezoidal weights per axis), optionally with spatial node weights.
    pub fn inner(&self, other: &SeparatedTensor, norm: &SpatialNorm) -> f64 {
        assert_eq!(self.n_space, other.n_space);
        assert_eq!(self.grid, other.grid);
        let weights: Vec<Vec<f64>> = self.grid.axes().iter().map(|a| a.trapezoid_weights()).collect();
        let mut total = 0.0;
        for ma in &self.modes {
            for mb in &other.modes {
                let mut term = norm.spatial_dot(&ma.spatial, &mb.spatial);
                if term == 0.0 {
                    continue;
                }
                for ((pa, pb), w) in ma.parametric.iter().zip(&mb.parametric).zip(&weights) {
                    let mut s = 0.0;
                    for ((&a, &b), &wi) in pa.iter().zip(pb).zip(w) {
                        s += wi * a * b;
                    }
                    term *= s;
                }
                total += term;
            }
        }
        total
    }

    pub fn norm(&self, norm: &SpatialNorm) -> f64 {
        self.inner(self, norm).max(0.0).sqrt()
    }
}

/// Spatial metric used by compression.
#[derive(Debug, Clone, Default)]
pub enum SpatialNorm {
    /// Plain discrete l2 over nodal values.
    #[default]
    NodalL2,
    /// Diagonally weighted l2 (one weight per node).
    Weighted(Vec<f64>),
}

impl SpatialNorm {
    fn spatial_dot(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            SpatialNorm::NodalL2 => crate::linalg::dot(a, b),
            SpatialNorm::Weighted(w) => {
                debug_assert_eq!(w.len(), a.len());
                a.iter().zip(b).zip(w).map(|((&x, &y), &wi)| wi * x * y).sum()
            }
        }
    }
}

/// Result of [`compress`].
#[derive(Debug, Clone)]
pub struct CompressOutcome {
    pub tensor: SeparatedTensor,
    /// Relative error of the returned tensor against the input.
    pub rel_error: f64,
    /// Set when the greedy re-approximation stalled and the input was
    /// returned unchanged.
    pub stagnated: bool,
}

/// Re-approximate `t` with fewer modes so that the relative
/// L2(space) x L2(grid) error stays below `tol` (greedy rank-one ALS on the
/// residual). If no shorter expansion reaches `tol`, the input is returned
/// unchanged (zero error), so the error bound always holds.
pub fn compress(t: &SeparatedTensor, tol: f64, norm: &SpatialNorm) -> CompressOutcome {
    assert!(tol > 0.0, "compression tolerance must be positive");
    let target_norm = t.norm(norm);
    if t.rank() == 0 || target_norm == 0.0 {
        return CompressOutcome {
            tensor: SeparatedTensor::zero(t.n_space, t.grid.clone()),
            rel_error: 0.0,
            stagnated: false,
        };
    }
    if t.rank() == 1 {
        return CompressOutcome {
            tensor: t.clone(),
            rel_error: 0.0,
            stagnated: false,
        };
    }

    let mut modes: Vec<Mode> = Vec::new();
    let mut prev_err = f64::INFINITY;
    while modes.len() + 1 < t.rank() {
        let approx = SeparatedTensor {
            n_space: t.n_space,
            grid: t.grid.clone(),
            modes: modes.clone(),
        };
        let residual = t.add(&approx.scale(-1.0));
        let mode = match rank_one_als(&residual, norm) {
            Some(m) => m,
            None => break,
        };
        modes.push(mode);
        let err = joint_als_refine(t, &mut modes, norm, tol, target_norm);
        let approx = SeparatedTensor {
            n_space: t.n_space,
            grid: t.grid.clone(),
            modes: modes.clone(),
        };
        if err <= tol {
            return CompressOutcome {
                tensor: approx,
                rel_error: err,
                stagnated: false,
            };
        }
        if err >= prev_err * (1.0 - 1e-12) {
            break; // no progress
        }
        prev_err = err;
    }

    CompressOutcome {
        tensor: t.clone(),
        rel_error: 0.0,
        stagnated: true,
    }
}

/// ALS sweeps updating all modes of the rank-`k` approximation jointly;
/// returns the final relative error against `t`.
///
/// Each block update solves a k-by-k Gram system: once for the spatial
/// vectors and once per parametric axis, where the Gram matrix is shared by
/// every collocation point of that axis. A singular Gram system aborts the
/// refinement, leaving the current modes in place. Sweeps stop once the
/// error clears `tol` with margin or stalls.
fn joint_als_refine(
    t: &SeparatedTensor,
    modes: &mut Vec<Mode>,
    norm: &SpatialNorm,
    tol: f64,
    target_norm: f64,
) -> f64 {
    use crate::linalg::dense::Mat;
    let k = modes.len();
    let rel_error = |modes: &[Mode]| -> f64 {
        let approx = SeparatedTensor {
            n_space: t.n_space,
            grid: t.grid.clone(),
            modes: modes.to_vec(),
        };
        t.add(&approx.scale(-1.0)).norm(norm) / target_norm
    };
    if k == 0 {
        return rel_error(modes);
    }
    let mut err = rel_error(modes);
    let n_axes = t.grid().n_axes();
    let weights: Vec<Vec<f64>> = t.grid().axes().iter().map(|a| a.trapezoid_weights()).collect();
    let wdot = |p: usize, a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .zip(&weights[p])
            .map(|((&x, &y), &w)| w * x * y)
            .sum()
    };

    for _sweep in 0..60 {
        // spatial block: V G = W C with G, C from parametric inner products
        {
            let mut gram = Mat::from_fn(k, k, |i, j| {
                (0..n_axes)
                    .map(|p| wdot(p, &modes[i].parametric[p], &modes[j].parametric[p]))
                    .product()
            });
            ridge(&mut gram);
            let mut rhs_cols: Vec<Vec<f64>> = vec![vec![0.0; t.n_space()]; k];
            for target in t.modes() {
                for (i, mode) in modes.iter().enumerate() {
                    let c: f64 = (0..n_axes)
                        .map(|p| wdot(p, &target.parametric[p], &mode.parametric[p]))
                        .product();
                    if c != 0.0 {
                        crate::linalg::axpy(c, &target.spatial, &mut rhs_cols[i]);
                    }
                }
            }
            // solve G^T a(x) = rhs(x) for every node; G is symmetric
            let mut new_spatials = vec![vec![0.0; t.n_space()]; k];
            let mut rhs_point = vec![0.0; k];
            for node in 0..t.n_space() {
                for i in 0..k {
                    rhs_point[i] = rhs_cols[i][node];
                }
                match gram.lu_solve(&rhs_point) {
                    Ok(sol) => {
                        for i in 0..k {
                            new_spatials[i][node] = sol[i];
                        }
                    }
                    Err(_) => return err,
                }
            }
            for (mode, sp) in modes.iter_mut().zip(new_spatials) {
                mode.spatial = sp;
            }
        }

        // parametric blocks
        for p in 0..n_axes {
            let mut gram = Mat::from_fn(k, k, |i, j| {
                let mut g = norm.spatial_dot(&modes[i].spatial, &modes[j].spatial);
                for q in 0..n_axes {
                    if q != p {
                        g *= wdot(q, &modes[i].parametric[q], &modes[j].parametric[q]);
                    }
                }
                g
            });
            ridge(&mut gram);
            let n_pts = t.grid().axes()[p].n_points();
            let mut rhs_rows: Vec<Vec<f64>> = vec![vec![0.0; n_pts]; k];
            for target in t.modes() {
                for (i, mode) in modes.iter().enumerate() {
                    let mut c = norm.spatial_dot(&target.spatial, &mode.spatial);
                    for q in 0..n_axes {
                        if q != p {
                            c *= wdot(q, &target.parametric[q], &mode.parametric[q]);
                        }
                    }
                    if c != 0.0 {
                        crate::linalg::axpy(c, &target.parametric[p], &mut rhs_rows[i]);
                    }
                }
            }
            let mut new_phis = vec![vec![0.0; n_pts]; k];
            let mut rhs_point = vec![0.0; k];
            for pt in 0..n_pts {
                for i in 0..k {
                    rhs_point[i] = rhs_rows[i][pt];
                }
                match gram.lu_solve(&rhs_point) {
                    Ok(sol) => {
                        for i in 0..k {
                            new_phis[i][pt] = sol[i];
                        }
                    }
                    Err(_) => return err,
                }
            }
            for (mode, phi) in modes.iter_mut().zip(new_phis) {
                mode.parametric[p] = phi;
            }
        }

        for mode in modes.iter_mut() {
            let m = std::mem::replace(
                mode,
                Mode {
                    spatial: Vec::new(),
                    parametric: Vec::new(),
                },
            );
            *mode = m.normalized();
        }

        let new_err = rel_error(modes);
        let stalled = new_err >= err * (1.0 - 1e-3);
        err = new_err;
        if err <= 0.5 * tol || stalled {
            break;
        }
    }
    err
}

/// Tiny diagonal shift keeping near-singular Gram systems solvable.
fn ridge(gram: &mut crate::linalg::dense::Mat) {
    let k = gram.n_rows();
    let trace: f64 = (0..k).map(|i| gram[(i, i)]).sum();
    let eps = 1e-13 * (trace / k as f64).abs().max(f64::MIN_POSITIVE);
    for i in 0..k {
        gram[(i, i)] += eps;
    }
}

/// Best rank-one approximation of `t` by alternating least squares in the
/// weighted metric. Deterministic: starts from flat parametric factors and
/// falls back to the dominant mode's factors if that start is degenerate.
fn rank_one_als(t: &SeparatedTensor, norm: &SpatialNorm) -> Option<Mode> {
    let weights: Vec<Vec<f64>> = t.grid().axes().iter().map(|a| a.trapezoid_weights()).collect();

    let flat: Vec<Vec<f64>> = t
        .grid()
        .axes()
        .iter()
        .map(|a| vec![1.0; a.n_points()])
        .collect();
    if let Some(m) = rank_one_als_from(t, norm, &weights, flat) {
        return Some(m);
    }
    // degenerate start: reuse the factors of the largest-amplitude mode
    let dominant = t
        .modes()
        .iter()
        .max_by(|a, b| {
            let na = crate::linalg::norm2(&a.spatial);
            let nb = crate::linalg::norm2(&b.spatial);
            na.partial_cmp(&nb).expect("finite norms")
        })?
        .parametric
        .clone();
    rank_one_als_from(t, norm, &weights, dominant)
}

fn rank_one_als_from(
    t: &SeparatedTensor,
    norm: &SpatialNorm,
    weights: &[Vec<f64>],
    mut phis: Vec<Vec<f64>>,
) -> Option<Mode> {
    let n_axes = phis.len();
    let wdot = |p: usize, a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .zip(&weights[p])
            .map(|((&x, &y), &w)| w * x * y)
            .sum()
    };

    let mut spatial = vec![0.0; t.n_space()];
    let mut prev: Option<Mode> = None;
    for _sweep in 0..60 {
        // spatial step: V = sum_m V_m prod_p <phi_m^p, phi^p> / prod_p <phi^p, phi^p>
        let mut denom = 1.0;
        for p in 0..n_axes {
            denom *= wdot(p, &phis[p], &phis[p]);
        }
        if denom <= 0.0 {
            return None;
        }
        for v in spatial.iter_mut() {
            *v = 0.0;
        }
        for mode in t.modes() {
            let mut c = 1.0;
            for p in 0..n_axes {
                c *= wdot(p, &mode.parametric[p], &phis[p]);
            }
            crate::linalg::axpy(c / denom, &mode.spatial, &mut spatial);
        }
        let v_dot_v = norm.spatial_dot(&spatial, &spatial);
        if v_dot_v == 0.0 {
            return None;
        }

        // parametric steps, one axis at a time (pointwise in that axis)
        for p in 0..n_axes {
            let mut other = vec![1.0f64; t.modes().len()];
            let mut other_self = 1.0;
            for q in 0..n_axes {
                if q == p {
                    continue;
                }
                other_self *= wdot(q, &phis[q], &phis[q]);
                for (om, mode) in other.iter_mut().zip(t.modes()) {
                    *om *= wdot(q, &mode.parametric[q], &phis[q]);
                }
            }
            let denom_p = v_dot_v * other_self;
            if denom_p == 0.0 {
                return None;
            }
            let n_pts = phis[p].len();
            let mut new_phi = vec![0.0f64; n_pts];
            for (mode, &om) in t.modes().iter().zip(&other) {
                let c = norm.spatial_dot(&mode.spatial, &spatial) * om / denom_p;
                if c != 0.0 {
                    crate::linalg::axpy(c, &mode.parametric[p], &mut new_phi);
                }
            }
            phis[p] = new_phi;
        }

        let candidate = Mode {
            spatial: spatial.clone(),
            parametric: phis.clone(),
        }
        .normalized();
        let amp = crate::linalg::norm2(&candidate.spatial);
        if amp == 0.0 {
            return None;
        }
        if let Some(prev_mode) = &prev {
            if rank_one_change(&candidate, prev_mode, norm, weights) < 1e-6 {
                return Some(candidate);
            }
        }
        phis = candidate.parametric.clone();
        prev = Some(candidate);
    }
    prev
}

/// Relative Frobenius distance between two rank-one tensors, computed from
/// factorized inner products.
fn rank_one_change(a: &Mode, b: &Mode, norm: &SpatialNorm, weights: &[Vec<f64>]) -> f64 {
    let wdot = |p: usize, x: &[f64], y: &[f64]| -> f64 {
        x.iter()
            .zip(y)
            .zip(&weights[p])
            .map(|((&u, &v), &w)| w * u * v)
            .sum()
    };
    let mut aa = norm.spatial_dot(&a.spatial, &a.spatial);
    let mut bb = norm.spatial_dot(&b.spatial, &b.spatial);
    let mut ab = norm.spatial_dot(&a.spatial, &b.spatial);
    for p in 0..a.parametric.len() {
        aa *= wdot(p, &a.parametric[p], &a.parametric[p]);
        bb *= wdot(p, &b.parametric[p], &b.parametric[p]);
        ab *= wdot(p, &a.parametric[p], &b.parametric[p]);
    }
    let denom = aa.max(bb);
    if denom <= 0.0 {
        return 0.0;
    }
    ((aa - 2.0 * ab + bb).max(0.0) / denom).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid2(n1: usize, n2: usize) -> ParamGrid {
        ParamGrid::new(vec![
            ParamAxis::new("a", 0.0, 1.0, 1.0 / (n1 - 1) as f64).unwrap(),
            ParamAxis::new("b", -1.0, 1.0, 2.0 / (n2 - 1) as f64).unwrap(),
        ])
        .unwrap()
    }

    fn random_tensor(rng: &mut ChaCha8Rng, n_space: usize, grid: &ParamGrid, rank: usize) -> SeparatedTensor {
        let modes = (0..rank)
            .map(|_| {
                Mode {
                    spatial: (0..n_space).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    parametric: grid
                        .axes()
                        .iter()
                        .map(|a| (0..a.n_points()).map(|_| rng.gen_range(-1.0..1.0)).collect())
                        .collect(),
                }
                .normalized()
            })
            .collect();
        SeparatedTensor::new(n_space, grid.clone(), modes).unwrap()
    }

    /// Dense evaluation oracle: explicit sum over modes at one grid point.
    fn dense_eval(t: &SeparatedTensor, idx: &[usize]) -> Vec<f64> {
        let mut out = vec![0.0; t.n_space()];
        for mode in t.modes() {
            let mut factor = 1.0;
            for (phi, &i) in mode.parametric.iter().zip(idx) {
                factor *= phi[i];
            }
            for (o, &s) in out.iter_mut().zip(&mode.spatial) {
                *o += factor * s;
            }
        }
        out
    }

    #[test]
    fn zero_tensor_evaluates_to_zero() {
        let t = SeparatedTensor::zero(4, grid2(3, 3));
        let v = t.evaluate(&[0.5, 0.0]).unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn flat_parametric_mode_returns_spatial() {
        let grid = grid2(5, 4);
        let spatial = vec![1.0, -2.0, 3.0];
        let t = SeparatedTensor::new(
            3,
            grid.clone(),
            vec![Mode {
                spatial: spatial.clone(),
                parametric: vec![vec![1.0; 5], vec![1.0; 4]],
            }],
        )
        .unwrap();
        for mu in [[0.0, -1.0], [0.31, 0.7], [1.0, 1.0]] {
            assert_eq!(t.evaluate(&mu).unwrap(), spatial);
        }
    }

    #[test]
    fn grid_point_evaluation_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let grid = grid2(6, 5);
        let t = random_tensor(&mut rng, 7, &grid, 2);
        for (i, j) in [(0usize, 0usize), (2, 3), (5, 4)] {
            let mu = [grid.axes()[0].points()[i], grid.axes()[1].points()[j]];
            let v = t.evaluate(&mu).unwrap();
            let o = dense_eval(&t, &[i, j]);
            for (a, b) in v.iter().zip(&o) {
                assert!((a - b).abs() <= 1e-14 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn out_of_domain_rejected() {
        let t = SeparatedTensor::zero(2, grid2(3, 3));
        assert!(matches!(
            t.evaluate(&[1.5, 0.0]),
            Err(SeparatedError::OutOfDomain { .. })
        ));
        assert!(matches!(
            t.evaluate(&[0.5, -1.2]),
            Err(SeparatedError::OutOfDomain { .. })
        ));
    }

    #[test]
    fn add_and_scale_are_pointwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let grid = grid2(4, 6);
        let a = random_tensor(&mut rng, 5, &grid, 2);
        let b = random_tensor(&mut rng, 5, &grid, 3);
        let mu = [0.37, -0.25];
        let va = a.evaluate(&mu).unwrap();
        let vb = b.evaluate(&mu).unwrap();
        let vsum = a.add(&b).evaluate(&mu).unwrap();
        assert_eq!(a.add(&b).rank(), 5);
        for i in 0..5 {
            assert_relative_eq!(vsum[i], va[i] + vb[i], epsilon = 1e-13);
        }
        let cancel = a.add(&a.scale(-1.0)).evaluate(&mu).unwrap();
        for v in cancel {
            assert!(v.abs() < 1e-13);
        }
        let zero = a.scale(0.0).evaluate(&mu).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn evaluation_is_linear_in_the_tensor() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let grid = grid2(5, 5);
        let a = random_tensor(&mut rng, 6, &grid, 2);
        let b = random_tensor(&mut rng, 6, &grid, 2);
        let (alpha, beta) = (2.5, -0.75);
        let mu = [0.62, 0.11];
        let lhs = a.scale(alpha).add(&b.scale(beta)).evaluate(&mu).unwrap();
        let va = a.evaluate(&mu).unwrap();
        let vb = b.evaluate(&mu).unwrap();
        for i in 0..6 {
            let rhs = alpha * va[i] + beta * vb[i];
            assert!((lhs[i] - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
        }
    }

    #[test]
    fn compress_rank_one_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let grid = grid2(4, 4);
        let t = random_tensor(&mut rng, 5, &grid, 1);
        let out = compress(&t, 1e-3, &SpatialNorm::NodalL2);
        assert_eq!(out.tensor.rank(), 1);
        assert!(out.rel_error <= 1e-12);
    }

    #[test]
    fn compress_collapses_duplicated_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let grid = grid2(5, 6);
        let base = random_tensor(&mut rng, 6, &grid, 1);
        let mut dup = base.clone();
        for _ in 0..4 {
            dup = dup.add(&base);
        }
        assert_eq!(dup.rank(), 5);
        let out = compress(&dup, 1e-3, &SpatialNorm::NodalL2);
        assert_eq!(out.tensor.rank(), 1);
        // the Gram-based error estimate bottoms out near sqrt(eps)
        assert!(out.rel_error <= 1e-7);
        // evaluation agrees with 5x the base
        let mu = [0.4, 0.2];
        let v = out.tensor.evaluate(&mu).unwrap();
        let b = base.evaluate(&mu).unwrap();
        for (x, y) in v.iter().zip(&b) {
            assert_relative_eq!(*x, 5.0 * y, epsilon = 1e-10, max_relative = 1e-10);
        }
    }

    #[test]
    fn compress_strips_noise_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let grid = grid2(6, 7);
        let signal = random_tensor(&mut rng, 8, &grid, 3);
        let noise = random_tensor(&mut rng, 8, &grid, 4).scale(1e-9);
        let t = signal.add(&noise);
        assert_eq!(t.rank(), 7);
        let out = compress(&t, 1e-3, &SpatialNorm::NodalL2);
        assert!(out.tensor.rank() <= 3, "rank {} > 3", out.tensor.rank());
        assert!(out.rel_error <= 1e-3);
    }

    #[test]
    fn compress_error_bound_holds_on_random_tensors() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let tol = 1e-3;
        for _case in 0..100 {
            let grid = grid2(rng.gen_range(3..7), rng.gen_range(3..7));
            let n_space = rng.gen_range(3..9);
            let rank = rng.gen_range(1..6);
            let t = random_tensor(&mut rng, n_space, &grid, rank);
            let out = compress(&t, tol, &SpatialNorm::NodalL2);
            assert!(out.tensor.rank() <= t.rank());
            // measure against the input in the compression metric
            let err = t.add(&out.tensor.scale(-1.0)).norm(&SpatialNorm::NodalL2)
                / t.norm(&SpatialNorm::NodalL2);
            assert!(err <= 1.05 * tol, "error {err} above bound");
        }
    }

    #[test]
    fn weighted_norm_changes_the_metric() {
        let grid = grid2(3, 3);
        let t = SeparatedTensor::new(
            2,
            grid,
            vec![Mode {
                spatial: vec![1.0, 2.0],
                parametric: vec![vec![1.0; 3], vec![1.0; 3]],
            }],
        )
        .unwrap();
        let plain = t.norm(&SpatialNorm::NodalL2);
        let weighted = t.norm(&SpatialNorm::Weighted(vec![4.0, 1.0]));
        assert!(plain > 0.0 && weighted > 0.0);
        assert!((plain - weighted).abs() > 1e-12);
    }
}
