//! Greedy rank-one PGD solver for parametric elliptic problems in separated
//! form.
//!
//! Spatial modes come from FEM solves of parametrically weighted stiffness
//! systems; parametric modes from pointwise algebraic solves at every
//! collocation point, using precomputed matrix inner products. Enrichment
//! appends modes until the candidate amplitude drops below `enrich_tol`
//! relative to the first mode.

use crate::fem::{assemble_load, assemble_neumann, assemble_stiffness, FemError, ScalarField, StructuredMesh};
use crate::linalg::{dot, norm2, CholeskyFactor, LinalgError, SparseMatrix};
use crate::separated::{Mode, ParamGrid, SeparatedError, SeparatedTensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PgdError {
    #[error("first PGD mode has zero amplitude but the problem data is nonzero")]
    ZeroFirstMode,
    #[error("parametric factor of length {got} does not match axis `{axis}` ({expected} points)")]
    FactorShape {
        axis: String,
        got: usize,
        expected: usize,
    },
    #[error("dirichlet lift must vanish at fixed-zero nodes (node {0})")]
    LiftOnFixedNode(usize),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Separated(#[from] SeparatedError),
}

/// One separable data term: a spatial field times one discrete function per
/// parametric axis (on the collocation grid; an empty list means constant 1
/// on every axis).
#[derive(Debug, Clone)]
pub struct DataTerm {
    pub spatial: ScalarField,
    pub parametric: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct NeumannTerm {
    pub tag: String,
    pub spatial: ScalarField,
    pub parametric: Vec<Vec<f64>>,
}

/// Rank-one Dirichlet lift: a nodal spatial vector with parametric factors.
#[derive(Debug, Clone)]
pub struct LiftTerm {
    pub spatial: Vec<f64>,
    pub parametric: Vec<Vec<f64>>,
}

/// A parametric elliptic problem with all data in separated form.
///
/// The unknown is the homogeneous part `v`: it vanishes at
/// `fixed_zero_nodes` and wherever the lift is nonzero; the physical field
/// is `lift + v`.
#[derive(Debug, Clone)]
pub struct SeparatedProblem {
    pub mesh: StructuredMesh,
    pub grid: ParamGrid,
    pub diffusion_terms: Vec<DataTerm>,
    pub source_terms: Vec<DataTerm>,
    pub neumann_terms: Vec<NeumannTerm>,
    pub dirichlet_lift: Option<LiftTerm>,
    pub fixed_zero_nodes: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct PgdConfig {
    /// Enrichment stops when a candidate's amplitude falls below
    /// `enrich_tol` times the first mode's amplitude.
    pub enrich_tol: f64,
    pub max_modes: usize,
    /// Relative change of the rank-one candidate that ends the fixed point.
    pub fp_tol: f64,
    pub fp_max_iters: usize,
    /// Seed for the random spatial initialization of each new mode.
    pub seed: u64,
}

impl Default for PgdConfig {
    fn default() -> Self {
        Self {
            enrich_tol: 1e-4,
            max_modes: 60,
            fp_tol: 1e-3,
            fp_max_iters: 25,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct PgdDiagnostics {
    /// Amplitude of each accepted mode, in enrichment order.
    pub amplitudes: Vec<f64>,
    /// Fixed-point sweeps used per accepted mode.
    pub fp_iterations: Vec<usize>,
    /// Per-mode flag: fixed point hit `fp_max_iters` without converging.
    pub fp_exhausted: Vec<bool>,
    pub factorization_cache_hits: usize,
}

#[derive(Debug, Clone)]
pub struct PgdSolution {
    /// Homogeneous part `v`; the physical field is `dirichlet_lift + v`.
    pub tensor: SeparatedTensor,
    pub diagnostics: PgdDiagnostics,
}

/// Amplitude of a mode: spatial l2 norm times the parametric max-norms
/// (unity under the normalization convention).
pub fn amplitude(mode: &Mode) -> f64 {
    let mut a = norm2(&mode.spatial);
    for phi in &mode.parametric {
        a *= phi.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    }
    a
}

/// Greedy rank-one PGD solve of `p`.
pub fn pgd_solve(p: &SeparatedProblem, cfg: &PgdConfig) -> Result<PgdSolution, PgdError> {
    let n_nodes = p.mesh.n_nodes();
    let grid = &p.grid;
    validate_factors(p)?;

    // spatial operators, one per diffusion term, over all nodes
    let stiffness: Vec<SparseMatrix> = p
        .diffusion_terms
        .iter()
        .map(|t| assemble_stiffness(&p.mesh, &t.spatial))
        .collect();

    // constrained nodes: prescribed zeros plus the lift support
    let mut constrained = p.fixed_zero_nodes.clone();
    if let Some(lift) = &p.dirichlet_lift {
        for &i in &p.fixed_zero_nodes {
            if lift.spatial[i] != 0.0 {
                return Err(PgdError::LiftOnFixedNode(i));
            }
        }
        constrained.extend((0..n_nodes).filter(|&i| lift.spatial[i] != 0.0));
    }
    constrained.sort_unstable();
    constrained.dedup();
    let mut is_constrained = vec![false; n_nodes];
    for &i in &constrained {
        is_constrained[i] = true;
    }
    let free: Vec<usize> = (0..n_nodes).filter(|&i| !is_constrained[i]).collect();
    let n_free = free.len();

    let reduced: Vec<SparseMatrix> = stiffness.iter().map(|k| k.submatrix(&free, &free)).collect();

    // right-hand-side terms restricted to free nodes, in separated form
    let mut rhs_terms: Vec<(Vec<f64>, Vec<Vec<f64>>)> = Vec::new();
    for term in &p.source_terms {
        let full = assemble_load(&p.mesh, &term.spatial);
        rhs_terms.push((restrict(&full, &free), expand_factors(&term.parametric, grid)));
    }
    for term in &p.neumann_terms {
        let full = assemble_neumann(&p.mesh, &term.spatial, &term.tag)?;
        rhs_terms.push((restrict(&full, &free), expand_factors(&term.parametric, grid)));
    }
    if let Some(lift) = &p.dirichlet_lift {
        let lift_factors = expand_factors(&lift.parametric, grid);
        for (k_full, term) in stiffness.iter().zip(&p.diffusion_terms) {
            let action = k_full.matvec(&lift.spatial);
            let spatial: Vec<f64> = free.iter().map(|&i| -action[i]).collect();
            let diff_factors = expand_factors(&term.parametric, grid);
            let combined: Vec<Vec<f64>> = diff_factors
                .iter()
                .zip(&lift_factors)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).collect())
                .collect();
            rhs_terms.push((spatial, combined));
        }
    }

    let data_scale: f64 = rhs_terms
        .iter()
        .map(|(s, f)| {
            norm2(s)
                * f.iter()
                    .map(|v| v.iter().fold(0.0f64, |m, &x| m.max(x.abs())))
                    .product::<f64>()
        })
        .fold(0.0, f64::max);
    if data_scale == 0.0 || n_free == 0 {
        return Ok(PgdSolution {
            tensor: SeparatedTensor::zero(n_nodes, grid.clone()),
            diagnostics: PgdDiagnostics::default(),
        });
    }

    let diff_factors: Vec<Vec<Vec<f64>>> = p
        .diffusion_terms
        .iter()
        .map(|t| expand_factors(&t.parametric, grid))
        .collect();

    let mut solver = EnrichmentState {
        grid,
        reduced: &reduced,
        diff_factors: &diff_factors,
        rhs_terms: &rhs_terms,
        modes_free: Vec::new(),
        kv: vec![Vec::new(); reduced.len()],
        phis: Vec::new(),
        cache: FactorCache::new(4),
        diagnostics: PgdDiagnostics::default(),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut first_amplitude: Option<f64> = None;
    let mut accepted: Vec<Mode> = Vec::new();

    for _m in 0..cfg.max_modes {
        let (v_free, phis, sweeps, fp_converged) = solver.next_mode(cfg, &mut rng)?;
        let amp = norm2(&v_free);
        match first_amplitude {
            None => {
                if !(amp > f64::MIN_POSITIVE) {
                    return Err(PgdError::ZeroFirstMode);
                }
                first_amplitude = Some(amp);
            }
            Some(first) => {
                if amp < cfg.enrich_tol * first {
                    break; // below the noise floor: discard candidate, stop
                }
            }
        }

        solver.accept(&v_free, &phis);
        solver.diagnostics.amplitudes.push(amp);
        solver.diagnostics.fp_iterations.push(sweeps);
        solver.diagnostics.fp_exhausted.push(!fp_converged);

        let mut spatial = vec![0.0; n_nodes];
        for (&node, &v) in free.iter().zip(&v_free) {
            spatial[node] = v;
        }
        accepted.push(Mode {
            spatial,
            parametric: phis,
        });
    }

    let diagnostics = solver.diagnostics;
    Ok(PgdSolution {
        tensor: SeparatedTensor::new(n_nodes, grid.clone(), accepted)?,
        diagnostics,
    })
}

fn validate_factors(p: &SeparatedProblem) -> Result<(), PgdError> {
    let check = |factors: &[Vec<f64>], grid: &ParamGrid| -> Result<(), PgdError> {
        if factors.is_empty() {
            return Ok(()); // all-constant
        }
        if factors.len() != grid.n_axes() {
            return Err(PgdError::FactorShape {
                axis: "<count>".into(),
                got: factors.len(),
                expected: grid.n_axes(),
            });
        }
        for (f, axis) in factors.iter().zip(grid.axes()) {
            if f.len() != axis.n_points() {
                return Err(PgdError::FactorShape {
                    axis: axis.name.clone(),
                    got: f.len(),
                    expected: axis.n_points(),
                });
            }
        }
        Ok(())
    };
    assert!(!p.diffusion_terms.is_empty(), "diffusion terms must be nonempty");
    for t in &p.diffusion_terms {
        check(&t.parametric, &p.grid)?;
    }
    for t in &p.source_terms {
        check(&t.parametric, &p.grid)?;
    }
    for t in &p.neumann_terms {
        check(&t.parametric, &p.grid)?;
    }
    if let Some(l) = &p.dirichlet_lift {
        check(&l.parametric, &p.grid)?;
    }
    Ok(())
}

fn restrict(full: &[f64], free: &[usize]) -> Vec<f64> {
    free.iter().map(|&i| full[i]).collect()
}

/// Missing factors mean "constant 1 on every axis".
fn expand_factors(factors: &[Vec<f64>], grid: &ParamGrid) -> Vec<Vec<f64>> {
    if factors.is_empty() {
        grid.axes().iter().map(|a| vec![1.0; a.n_points()]).collect()
    } else {
        factors.to_vec()
    }
}

/// FIFO cache of Cholesky factors keyed by the exact weight bit patterns.
struct FactorCache {
    cap: usize,
    entries: Vec<(Vec<u64>, Arc<CholeskyFactor>)>,
}

impl FactorCache {
    fn new(cap: usize) -> Self {
        Self {
            cap,
            entries: Vec::new(),
        }
    }

    fn key(weights: &[f64]) -> Vec<u64> {
        weights.iter().map(|w| w.to_bits()).collect()
    }

    fn get(&self, key: &[u64]) -> Option<Arc<CholeskyFactor>> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, f)| f.clone())
    }

    fn put(&mut self, key: Vec<u64>, factor: Arc<CholeskyFactor>) {
        if self.entries.len() >= self.cap {
            self.entries.remove(0);
        }
        self.entries.push((key, factor));
    }
}

struct EnrichmentState<'a> {
    grid: &'a ParamGrid,
    reduced: &'a [SparseMatrix],
    diff_factors: &'a [Vec<Vec<f64>>],
    rhs_terms: &'a [(Vec<f64>, Vec<Vec<f64>>)],
    /// accepted spatial modes on free nodes
    modes_free: Vec<Vec<f64>>,
    /// kv[k][m] = K_k * V_m, kept for residual assembly
    kv: Vec<Vec<Vec<f64>>>,
    /// accepted parametric modes
    phis: Vec<Vec<Vec<f64>>>,
    cache: FactorCache,
    diagnostics: PgdDiagnostics,
}

impl<'a> EnrichmentState<'a> {
    fn accept(&mut self, v_free: &[f64], phis: &[Vec<f64>]) {
        for (k, mat) in self.reduced.iter().enumerate() {
            self.kv[k].push(mat.matvec(v_free));
        }
        self.modes_free.push(v_free.to_vec());
        self.phis.push(phis.to_vec());
    }

    /// One greedy enrichment: alternate spatial and parametric updates until
    /// the rank-one candidate stabilizes. Returns the candidate (normalized:
    /// amplitude on the spatial vector), the sweep count and whether the
    /// fixed point converged.
    fn next_mode(
        &mut self,
        cfg: &PgdConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>, usize, bool), PgdError> {
        let n_free = self.reduced[0].n_rows();
        let n_axes = self.grid.n_axes();
        let mut v: Vec<f64> = (0..n_free).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut phis: Vec<Vec<f64>> = self
            .grid
            .axes()
            .iter()
            .map(|a| vec![1.0; a.n_points()])
            .collect();

        let mut prev: Option<(Vec<f64>, Vec<Vec<f64>>)> = None;
        let mut sweeps = 0usize;
        let mut converged = false;
        let mut matrix = self.reduced[0].clone();

        while sweeps < cfg.fp_max_iters {
            sweeps += 1;

            // ---- spatial update ----
            // operator weights: w_k = prod_p sum_t alpha_k^p(t) phi_p(t)^2
            let weights: Vec<f64> = self
                .diff_factors
                .iter()
                .map(|fk| {
                    fk.iter()
                        .zip(&phis)
                        .map(|(a, phi)| a.iter().zip(phi).map(|(&x, &p)| x * p * p).sum::<f64>())
                        .product()
                })
                .collect();
            // load: data terms projected on the current parametric factors
            let mut b = vec![0.0; n_free];
            for (spatial, factors) in self.rhs_terms {
                let c: f64 = factors
                    .iter()
                    .zip(&phis)
                    .map(|(f, phi)| f.iter().zip(phi).map(|(&x, &p)| x * p).sum::<f64>())
                    .product();
                crate::linalg::axpy(c, spatial, &mut b);
            }
            // minus the stiffness action of the accepted modes
            for (k, fk) in self.diff_factors.iter().enumerate() {
                for (m, phi_m) in self.phis.iter().enumerate() {
                    let c: f64 = fk
                        .iter()
                        .zip(phi_m)
                        .zip(&phis)
                        .map(|((a, pm), p)| {
                            a.iter().zip(pm).zip(p).map(|((&x, &u), &w)| x * u * w).sum::<f64>()
                        })
                        .product();
                    crate::linalg::axpy(-c, &self.kv[k][m], &mut b);
                }
            }

            let key = FactorCache::key(&weights);
            let factor = match self.cache.get(&key) {
                Some(f) => {
                    self.diagnostics.factorization_cache_hits += 1;
                    f
                }
                None => {
                    let mats: Vec<&SparseMatrix> = self.reduced.iter().collect();
                    matrix.set_combination(&mats, &weights);
                    let f = Arc::new(CholeskyFactor::new(&matrix)?);
                    self.cache.put(key, f.clone());
                    f
                }
            };
            v = factor.solve(&b);

            // ---- parametric updates, one axis at a time ----
            let kvv: Vec<f64> = self.reduced.iter().map(|mat| dot(&v, &mat.matvec(&v))).collect();
            let cvm: Vec<Vec<f64>> = self
                .kv
                .iter()
                .map(|per_mode| per_mode.iter().map(|kvm| dot(&v, kvm)).collect())
                .collect();
            let dv: Vec<f64> = self.rhs_terms.iter().map(|(s, _)| dot(&v, s)).collect();

            for p_axis in 0..n_axes {
                let n_pts = self.grid.axes()[p_axis].n_points();
                let mut num = vec![0.0f64; n_pts];
                let mut den = vec![0.0f64; n_pts];

                for (spatial_dot, (_, factors)) in dv.iter().zip(self.rhs_terms) {
                    let mut other = *spatial_dot;
                    for (q, (f, phi)) in factors.iter().zip(&phis).enumerate() {
                        if q != p_axis {
                            other *= f.iter().zip(phi).map(|(&x, &p)| x * p).sum::<f64>();
                        }
                    }
                    if other != 0.0 {
                        for (n, &f) in num.iter_mut().zip(&factors[p_axis]) {
                            *n += other * f;
                        }
                    }
                }
                for (k, fk) in self.diff_factors.iter().enumerate() {
                    // denominator: operator weight on this axis
                    let mut other = kvv[k];
                    for (q, (a, phi)) in fk.iter().zip(&phis).enumerate() {
                        if q != p_axis {
                            other *= a.iter().zip(phi).map(|(&x, &p)| x * p * p).sum::<f64>();
                        }
                    }
                    for (d, &a) in den.iter_mut().zip(&fk[p_axis]) {
                        *d += other * a;
                    }
                    // numerator: minus the accepted-mode contributions
                    for (m, phi_m) in self.phis.iter().enumerate() {
                        let mut c = cvm[k][m];
                        for q in 0..n_axes {
                            if q != p_axis {
                                c *= fk[q]
                                    .iter()
                                    .zip(&phi_m[q])
                                    .zip(&phis[q])
                                    .map(|((&x, &u), &w)| x * u * w)
                                    .sum::<f64>();
                            }
                        }
                        if c != 0.0 {
                            for ((n, &a), &u) in num.iter_mut().zip(&fk[p_axis]).zip(&phi_m[p_axis]) {
                                *n -= c * a * u;
                            }
                        }
                    }
                }
                for ((phi, &n), &d) in phis[p_axis].iter_mut().zip(&num).zip(&den) {
                    *phi = if d != 0.0 { n / d } else { 0.0 };
                }
            }

            // normalize: parametric to unit max-norm, amplitude on spatial
            let mut amp = 1.0;
            let mut degenerate = false;
            for phi in &mut phis {
                let m = phi.iter().fold(0.0f64, |acc, &x| acc.max(x.abs()));
                if m == 0.0 {
                    degenerate = true;
                    break;
                }
                for x in phi.iter_mut() {
                    *x /= m;
                }
                amp *= m;
            }
            if degenerate {
                for x in v.iter_mut() {
                    *x = 0.0;
                }
                converged = true;
                break;
            }
            for x in v.iter_mut() {
                *x *= amp;
            }

            if let Some((pv, pp)) = &prev {
                if rank_one_rel_change(&v, &phis, pv, pp) < cfg.fp_tol {
                    converged = true;
                    break;
                }
            }
            prev = Some((v.clone(), phis.clone()));
        }

        Ok((v, phis, sweeps, converged))
    }
}

/// Relative Frobenius distance between rank-one candidates, from factorized
/// inner products over the collocation grid (plain sums).
fn rank_one_rel_change(va: &[f64], pa: &[Vec<f64>], vb: &[f64], pb: &[Vec<f64>]) -> f64 {
    let mut aa = dot(va, va);
    let mut bb = dot(vb, vb);
    let mut ab = dot(va, vb);
    for (a, b) in pa.iter().zip(pb) {
        aa *= dot(a, a);
        bb *= dot(b, b);
        ab *= dot(a, b);
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
    use crate::fem::{eliminate_dirichlet, SideTag, StructuredMesh};
    use crate::linalg::spd_solve;
    use crate::separated::ParamAxis;

    fn dirichlet_square(nx: usize, ny: usize) -> StructuredMesh {
        StructuredMesh::rectangle(
            (0.0, 0.0),
            (1.0, 1.0),
            nx,
            ny,
            [
                SideTag::dirichlet(),
                SideTag::dirichlet(),
                SideTag::dirichlet(),
                SideTag::dirichlet(),
            ],
        )
        .unwrap()
    }

    fn small_grid() -> ParamGrid {
        ParamGrid::new(vec![ParamAxis::new("mu", 1.0, 5.0, 0.25).unwrap()]).unwrap()
    }

    fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        let scale: f64 = b.iter().map(|y| y * y).sum::<f64>();
        (diff / scale).sqrt()
    }

    #[test]
    fn amplitude_basics() {
        let zero = Mode {
            spatial: vec![0.0; 3],
            parametric: vec![vec![1.0; 4]],
        };
        assert_eq!(amplitude(&zero), 0.0);
        let unit = Mode {
            spatial: vec![0.0, 1.0, 0.0],
            parametric: vec![vec![1.0; 4]],
        };
        assert_eq!(amplitude(&unit), 1.0);
        let doubled = Mode {
            spatial: vec![0.0, 2.0, 0.0],
            parametric: unit.parametric.clone(),
        };
        assert_eq!(amplitude(&doubled), 2.0 * amplitude(&unit));
    }

    #[test]
    fn zero_data_gives_zero_tensor() {
        let mesh = dirichlet_square(4, 4);
        let fixed = mesh.dirichlet_nodes();
        let p = SeparatedProblem {
            mesh,
            grid: small_grid(),
            diffusion_terms: vec![DataTerm {
                spatial: ScalarField::constant(1.0),
                parametric: Vec::new(),
            }],
            source_terms: Vec::new(),
            neumann_terms: Vec::new(),
            dirichlet_lift: None,
            fixed_zero_nodes: fixed,
        };
        let sol = pgd_solve(&p, &PgdConfig::default()).unwrap();
        assert_eq!(sol.tensor.rank(), 0);
    }

    #[test]
    fn parameter_independent_problem_is_rank_one() {
        let mesh = dirichlet_square(6, 6);
        let fixed = mesh.dirichlet_nodes();
        let p = SeparatedProblem {
            mesh: mesh.clone(),
            grid: small_grid(),
            diffusion_terms: vec![DataTerm {
                spatial: ScalarField::constant(1.0),
                parametric: Vec::new(),
            }],
            source_terms: vec![DataTerm {
                spatial: ScalarField::constant(1.0),
                parametric: Vec::new(),
            }],
            neumann_terms: Vec::new(),
            dirichlet_lift: None,
            fixed_zero_nodes: fixed.clone(),
        };
        let sol = pgd_solve(&p, &PgdConfig::default()).unwrap();
        assert_eq!(sol.tensor.rank(), 1);

        // matches the single FEM solve at any mu
        let k = assemble_stiffness(&mesh, &ScalarField::constant(1.0));
        let b = assemble_load(&mesh, &ScalarField::constant(1.0));
        let red = eliminate_dirichlet(&k, &b, &fixed, &vec![0.0; fixed.len()]);
        let x = spd_solve(&red.matrix, &red.rhs).unwrap();
        let fem = red.expand(&x);
        let pgd = sol.tensor.evaluate(&[2.5]).unwrap();
        assert!(rel_l2(&pgd, &fem) < 1e-10, "rel diff {}", rel_l2(&pgd, &fem));
    }

    #[test]
    fn parametric_diffusion_matches_fem_at_grid_points() {
        // nu = 1 + mu * x, s = 1 on the unit square
        let mesh = dirichlet_square(6, 5);
        let fixed = mesh.dirichlet_nodes();
        let grid = small_grid();
        let mu_values: Vec<f64> = grid.axes()[0].points().to_vec();
        let p = SeparatedProblem {
            mesh: mesh.clone(),
            grid: grid.clone(),
            diffusion_terms: vec![
                DataTerm {
                    spatial: ScalarField::constant(1.0),
                    parametric: vec![vec![1.0; mu_values.len()]],
                },
                DataTerm {
                    spatial: ScalarField::new("x", |x, _| x),
                    parametric: vec![mu_values.clone()],
                },
            ],
            source_terms: vec![DataTerm {
                spatial: ScalarField::constant(1.0),
                parametric: Vec::new(),
            }],
            neumann_terms: Vec::new(),
            dirichlet_lift: None,
            fixed_zero_nodes: fixed.clone(),
        };
        let cfg = PgdConfig {
            enrich_tol: 1e-6,
            max_modes: 30,
            ..PgdConfig::default()
        };
        let sol = pgd_solve(&p, &cfg).unwrap();
        assert!(sol.tensor.rank() >= 2);

        for &mu in &[1.0, 2.25, 5.0] {
            let nu = ScalarField::new("nu", move |x, _| 1.0 + mu * x);
            let k = assemble_stiffness(&mesh, &nu);
            let b = assemble_load(&mesh, &ScalarField::constant(1.0));
            let red = eliminate_dirichlet(&k, &b, &fixed, &vec![0.0; fixed.len()]);
            let x = spd_solve(&red.matrix, &red.rhs).unwrap();
            let fem = red.expand(&x);
            let pgd = sol.tensor.evaluate(&[mu]).unwrap();
            assert!(
                rel_l2(&pgd, &fem) < 10.0 * cfg.enrich_tol,
                "mu={mu}: rel diff {}",
                rel_l2(&pgd, &fem)
            );
        }
    }

    #[test]
    fn trace_lift_problem_vanishes_on_constrained_nodes() {
        let mesh = StructuredMesh::rectangle(
            (0.0, 0.0),
            (1.0, 1.0),
            4,
            4,
            [
                SideTag::dirichlet(),
                SideTag::interface("g"),
                SideTag::dirichlet(),
                SideTag::dirichlet(),
            ],
        )
        .unwrap();
        let dirichlet = mesh.dirichlet_nodes();
        let gamma = mesh.interface_nodes("g");
        let lift_node = gamma[1];
        let mut lift = vec![0.0; mesh.n_nodes()];
        lift[lift_node] = 1.0;

        let mut fixed: Vec<usize> = dirichlet.clone();
        fixed.extend(gamma.iter().copied().filter(|&n| n != lift_node));
        fixed.sort_unstable();

        let grid = small_grid();
        let n_mu = grid.axes()[0].n_points();
        let p = SeparatedProblem {
            mesh: mesh.clone(),
            grid: grid.clone(),
            diffusion_terms: vec![
                DataTerm {
                    spatial: ScalarField::constant(1.0),
                    parametric: vec![vec![1.0; n_mu]],
                },
                DataTerm {
                    spatial: ScalarField::new("x", |x, _| x),
                    parametric: vec![grid.axes()[0].points().to_vec()],
                },
            ],
            source_terms: Vec::new(),
            neumann_terms: Vec::new(),
            dirichlet_lift: Some(LiftTerm {
                spatial: lift.clone(),
                parametric: Vec::new(),
            }),
            fixed_zero_nodes: fixed.clone(),
        };
        let sol = pgd_solve(&p, &PgdConfig::default()).unwrap();
        assert!(sol.tensor.rank() >= 1);
        for mode in sol.tensor.modes() {
            for &i in fixed.iter().chain(std::iter::once(&lift_node)) {
                assert_eq!(mode.spatial[i], 0.0, "mode leaks onto node {i}");
            }
        }

        // lift + v solves the trace problem at a grid point
        let mu = 3.0;
        let nu = ScalarField::new("nu", move |x, _| 1.0 + mu * x);
        let k = assemble_stiffness(&mesh, &nu);
        let zeros = vec![0.0; mesh.n_nodes()];
        let mut all_fixed = fixed.clone();
        all_fixed.push(lift_node);
        all_fixed.sort_unstable();
        let values: Vec<f64> = all_fixed
            .iter()
            .map(|&n| if n == lift_node { 1.0 } else { 0.0 })
            .collect();
        let red = eliminate_dirichlet(&k, &zeros, &all_fixed, &values);
        let x = spd_solve(&red.matrix, &red.rhs).unwrap();
        let fem = red.expand(&x);
        let v = sol.tensor.evaluate(&[mu]).unwrap();
        let full: Vec<f64> = v.iter().zip(&lift).map(|(a, b)| a + b).collect();
        assert!(rel_l2(&full, &fem) < 1e-3, "rel diff {}", rel_l2(&full, &fem));
    }

    #[test]
    fn enrichment_is_deterministic() {
        let mesh = dirichlet_square(5, 5);
        let fixed = mesh.dirichlet_nodes();
        let grid = small_grid();
        let n_mu = grid.axes()[0].n_points();
        let mk = || SeparatedProblem {
            mesh: mesh.clone(),
            grid: grid.clone(),
            diffusion_terms: vec![
                DataTerm {
                    spatial: ScalarField::constant(1.0),
                    parametric: vec![vec![1.0; n_mu]],
                },
                DataTerm {
                    spatial: ScalarField::new("x", |x, _| x),
                    parametric: vec![grid.axes()[0].points().to_vec()],
                },
            ],
            source_terms: vec![DataTerm {
                spatial: ScalarField::new("y", |_, y| y),
                parametric: Vec::new(),
            }],
            neumann_terms: Vec::new(),
            dirichlet_lift: None,
            fixed_zero_nodes: fixed.clone(),
        };
        let cfg = PgdConfig {
            seed: 42,
            ..PgdConfig::default()
        };
        let a = pgd_solve(&mk(), &cfg).unwrap();
        let b = pgd_solve(&mk(), &cfg).unwrap();
        assert_eq!(a.tensor.rank(), b.tensor.rank());
        for (ma, mb) in a.tensor.modes().iter().zip(b.tensor.modes()) {
            assert_eq!(ma.spatial, mb.spatial);
            assert_eq!(ma.parametric, mb.parametric);
        }
    }

    #[test]
    fn residual_norm_decreases_with_enrichment() {
        // residual at sampled grid points is non-increasing across
        // enrichment steps (1% slack for fixed-point inexactness)
        let mesh = dirichlet_square(5, 4);
        let fixed = mesh.dirichlet_nodes();
        let grid = small_grid();
        let mu_pts = grid.axes()[0].points().to_vec();
        let mk = || SeparatedProblem {
            mesh: mesh.clone(),
            grid: grid.clone(),
            diffusion_terms: vec![
                DataTerm {
                    spatial: ScalarField::constant(1.0),
                    parametric: vec![vec![1.0; mu_pts.len()]],
                },
                DataTerm {
                    spatial: ScalarField::new("x", |x, _| x),
                    parametric: vec![mu_pts.clone()],
                },
            ],
            source_terms: vec![DataTerm {
                spatial: ScalarField::constant(1.0),
                parametric: Vec::new(),
            }],
            neumann_terms: Vec::new(),
            dirichlet_lift: None,
            fixed_zero_nodes: fixed.clone(),
        };

        let sample_mu = [1.0, 1.75, 2.5, 3.75, 5.0];
        let residual_at = |tensor: &SeparatedTensor, mu: f64| -> f64 {
            let nu = ScalarField::new("nu", move |x, _| 1.0 + mu * x);
            let k = assemble_stiffness(&mesh, &nu);
            let b = assemble_load(&mesh, &ScalarField::constant(1.0));
            let red = eliminate_dirichlet(&k, &b, &fixed, &vec![0.0; fixed.len()]);
            let u = tensor.evaluate(&[mu]).unwrap();
            let u_free: Vec<f64> = red.free_nodes.iter().map(|&i| u[i]).collect();
            let r = red.matrix.matvec(&u_free);
            let res: Vec<f64> = r.iter().zip(&red.rhs).map(|(a, b)| a - b).collect();
            norm2(&res)
        };

        let mut prev: Option<Vec<f64>> = None;
        for max_modes in 1..=4 {
            let cfg = PgdConfig {
                max_modes,
                ..PgdConfig::default()
            };
            let sol = pgd_solve(&mk(), &cfg).unwrap();
            let res: Vec<f64> = sample_mu.iter().map(|&m| residual_at(&sol.tensor, m)).collect();
            if let Some(p) = &prev {
                for (r_new, r_old) in res.iter().zip(p) {
                    assert!(*r_new <= r_old * 1.01, "residual grew: {r_new} > {r_old}");
                }
            }
            prev = Some(res);
        }
    }
}
