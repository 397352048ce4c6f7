//! Oracles: monolithic full-order FEM solves, the classical alternating
//! Schwarz loop with direct local solves, and error norms.
//!
//! These never touch the separated representation; they exist to check the
//! DD-PGD pipeline against independent computations.

use crate::fem::{
    assemble_load, assemble_neumann, assemble_stiffness, eliminate_dirichlet, BoundaryKind,
    FemError, ScalarField, StructuredMesh, GAUSS_3,
};
use crate::linalg::{CholeskyFactor, LinalgError};
use crate::offline::Subdomain;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReferenceError {
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("alternating Schwarz did not converge in {max_iters} sweeps (last increment {increment:.3e})")]
    SchwarzExhausted { max_iters: usize, increment: f64 },
    #[error("subdomain `{subdomain}` interface node at ({x}, {y}) not found in `{neighbor}`")]
    NodeMatch {
        subdomain: String,
        neighbor: String,
        x: f64,
        y: f64,
    },
    #[error("unknown neighbor `{0}`")]
    UnknownNeighbor(String),
}

/// A spatial field depending on the full parameter tuple.
#[derive(Clone)]
pub struct ParamField {
    f: Arc<dyn Fn(f64, f64, &[f64]) -> f64 + Send + Sync>,
}

impl ParamField {
    pub fn new(f: impl Fn(f64, f64, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self { f: Arc::new(f) }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(move |_, _, _| c)
    }

    pub fn eval(&self, x: f64, y: f64, mu: &[f64]) -> f64 {
        (self.f)(x, y, mu)
    }

    /// Freeze the parameters, yielding a purely spatial field.
    pub fn at_mu(&self, mu: &[f64]) -> ScalarField {
        let f = self.f.clone();
        let mu = mu.to_vec();
        ScalarField::new("frozen", move |x, y| f(x, y, &mu))
    }
}

impl std::fmt::Debug for ParamField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ParamField")
    }
}

/// The global problem at full order: mesh with boundary tags, data as
/// closures of space and parameters, optional exact solution.
#[derive(Debug, Clone)]
pub struct GlobalProblem {
    pub mesh: StructuredMesh,
    pub diffusion: ParamField,
    pub source: ParamField,
    /// Prescribed co-normal flux per Neumann tag (untagged Neumann sides
    /// are natural).
    pub neumann: Vec<(String, ParamField)>,
    pub exact: Option<ParamField>,
}

/// Single assembled FEM solve of the global problem at fixed parameters.
pub fn full_order_solve(gp: &GlobalProblem, mu: &[f64]) -> Result<Vec<f64>, ReferenceError> {
    let k = assemble_stiffness(&gp.mesh, &gp.diffusion.at_mu(mu));
    let mut b = assemble_load(&gp.mesh, &gp.source.at_mu(mu));
    for (tag, g) in &gp.neumann {
        let contrib = assemble_neumann(&gp.mesh, &g.at_mu(mu), tag)?;
        for (bi, ci) in b.iter_mut().zip(&contrib) {
            *bi += ci;
        }
    }
    let fixed = gp.mesh.dirichlet_nodes();
    let red = eliminate_dirichlet(&k, &b, &fixed, &vec![0.0; fixed.len()]);
    let x = CholeskyFactor::new(&red.matrix)?.solve(&red.rhs);
    Ok(red.expand(&x))
}

/// Result of the classical alternating Schwarz loop.
#[derive(Debug, Clone)]
pub struct SchwarzRun {
    /// Final nodal field per subdomain.
    pub fields: Vec<Vec<f64>>,
    /// Final interface traces per subdomain, in Lambda order.
    pub traces: Vec<Vec<f64>>,
    /// Full Gauss-Seidel sweeps performed.
    pub iters: usize,
    /// Max-norm trace increment after each sweep.
    pub increments: Vec<f64>,
}

struct LocalSolver {
    factor: CholeskyFactor,
    coupling: crate::linalg::SparseMatrix,
    rhs_free: Vec<f64>,
    free_nodes: Vec<usize>,
    fixed_nodes: Vec<usize>,
    n_nodes: usize,
}

impl LocalSolver {
    /// Solve with the given values at the fixed nodes (Dirichlet plus
    /// interface traces).
    fn solve(&self, fixed_values: &[f64]) -> Vec<f64> {
        let lifted = self.coupling.matvec(fixed_values);
        let rhs: Vec<f64> = self.rhs_free.iter().zip(&lifted).map(|(b, l)| b - l).collect();
        let x = self.factor.solve(&rhs);
        let mut full = vec![0.0; self.n_nodes];
        for (&n, &v) in self.free_nodes.iter().zip(&x) {
            full[n] = v;
        }
        for (&n, &v) in self.fixed_nodes.iter().zip(fixed_values) {
            full[n] = v;
        }
        full
    }
}

/// Classical alternating Schwarz: Gauss-Seidel sweeps of direct local
/// solves exchanging Dirichlet traces until the max-norm trace increment
/// over the interface nodes drops below `tol`.
///
/// `initial` optionally seeds the interface traces (per subdomain, in
/// Lambda order); zero traces otherwise.
#[allow(clippy::too_many_arguments)]
pub fn alternating_schwarz(
    subdomains: &[Subdomain],
    diffusion: &ParamField,
    source: &ParamField,
    neumann: &[(String, ParamField)],
    mu: &[f64],
    tol: f64,
    max_iters: usize,
    initial: Option<&[Vec<f64>]>,
) -> Result<SchwarzRun, ReferenceError> {
    // per-subdomain direct solvers with cached factorizations
    let mut solvers = Vec::with_capacity(subdomains.len());
    for sd in subdomains {
        let k = assemble_stiffness(&sd.mesh, &diffusion.at_mu(mu));
        let mut b = assemble_load(&sd.mesh, &source.at_mu(mu));
        for (tag, g) in neumann {
            if sd.mesh.boundary_edges().iter().any(|e| {
                e.kind == BoundaryKind::ExteriorNeumann && e.label == *tag
            }) {
                let contrib = assemble_neumann(&sd.mesh, &g.at_mu(mu), tag)?;
                for (bi, ci) in b.iter_mut().zip(&contrib) {
                    *bi += ci;
                }
            }
        }
        let mut fixed: Vec<usize> = sd.exterior_dirichlet_nodes.clone();
        fixed.extend(sd.lambda_nodes());
        fixed.sort_unstable();
        fixed.dedup();
        let red = eliminate_dirichlet(&k, &b, &fixed, &vec![0.0; fixed.len()]);
        solvers.push(LocalSolver {
            factor: CholeskyFactor::new(&red.matrix)?,
            coupling: red.coupling,
            rhs_free: red.rhs,
            free_nodes: red.free_nodes,
            fixed_nodes: red.fixed_nodes,
            n_nodes: sd.mesh.n_nodes(),
        });
    }

    // trace exchange maps: for every interface of sd i, the node in the
    // neighbor's mesh matching each interface node
    let mut exchange: Vec<Vec<(usize, Vec<usize>)>> = Vec::with_capacity(subdomains.len());
    for sd in subdomains {
        let mut per_interface = Vec::with_capacity(sd.interfaces.len());
        for spec in &sd.interfaces {
            let j = subdomains
                .iter()
                .position(|s| s.id == spec.neighbor)
                .ok_or_else(|| ReferenceError::UnknownNeighbor(spec.neighbor.clone()))?;
            let mesh_j = &subdomains[j].mesh;
            let tol_geo = 1e-9 * mesh_j.hx().min(mesh_j.hy());
            let nodes: Result<Vec<usize>, ReferenceError> = spec
                .nodes
                .iter()
                .map(|&n| {
                    let (x, y) = sd.mesh.coords(n);
                    mesh_j.node_at_coords(x, y, tol_geo).ok_or_else(|| {
                        ReferenceError::NodeMatch {
                            subdomain: sd.id.clone(),
                            neighbor: spec.neighbor.clone(),
                            x,
                            y,
                        }
                    })
                })
                .collect();
            per_interface.push((j, nodes?));
        }
        exchange.push(per_interface);
    }

    // traces per subdomain, in Lambda order
    let mut traces: Vec<Vec<f64>> = match initial {
        Some(init) => init.to_vec(),
        None => subdomains
            .iter()
            .map(|sd| vec![0.0; sd.n_interface_nodes()])
            .collect(),
    };
    let mut fields: Vec<Vec<f64>> = subdomains.iter().map(|sd| vec![0.0; sd.mesh.n_nodes()]).collect();
    let mut increments = Vec::new();

    for sweep in 1..=max_iters {
        let mut increment = 0.0f64;
        for (i, sd) in subdomains.iter().enumerate() {
            // fixed values: zeros on the Dirichlet boundary, traces on the
            // interfaces (fixed_nodes are sorted; locate each lambda node)
            let solver = &solvers[i];
            let mut values = vec![0.0; solver.fixed_nodes.len()];
            for (pos, &node) in sd.lambda_nodes().iter().enumerate() {
                let slot = solver
                    .fixed_nodes
                    .binary_search(&node)
                    .expect("interface node is fixed");
                values[slot] = traces[i][pos];
            }
            fields[i] = solver.solve(&values);

            // push the fresh field onto every neighbor interface that reads
            // from this subdomain
            for (other, specs) in exchange.iter().enumerate() {
                let mut offset = 0;
                for (spec_idx, (source_idx, nodes)) in specs.iter().enumerate() {
                    let len = subdomains[other].interfaces[spec_idx].nodes.len();
                    if *source_idx == i {
                        for (pos, &node) in nodes.iter().enumerate() {
                            let new = fields[i][node];
                            let old = traces[other][offset + pos];
                            increment = increment.max((new - old).abs());
                            traces[other][offset + pos] = new;
                        }
                    }
                    offset += len;
                }
            }
        }
        increments.push(increment);
        if increment < tol {
            return Ok(SchwarzRun {
                fields,
                traces,
                iters: sweep,
                increments,
            });
        }
    }

    Err(ReferenceError::SchwarzExhausted {
        max_iters,
        increment: increments.last().copied().unwrap_or(f64::NAN),
    })
}

/// Relative L2 error of a nodal field against a closure, by 3x3 Gauss
/// quadrature of the Q1 interpolant per element.
pub fn rel_l2_error(field: &[f64], exact: impl Fn(f64, f64) -> f64, mesh: &StructuredMesh) -> f64 {
    let (hx, hy) = (mesh.hx(), mesh.hy());
    let det_j = hx * hy / 4.0;
    let mut err2 = 0.0;
    let mut norm2 = 0.0;
    for conn in mesh.elements() {
        let (x0, y0) = mesh.coords(conn[0]);
        for &(xi, wx) in GAUSS_3.iter() {
            for &(eta, wy) in GAUSS_3.iter() {
                let x = x0 + (xi + 1.0) * 0.5 * hx;
                let y = y0 + (eta + 1.0) * 0.5 * hy;
                let n = crate::fem::shape(xi, eta);
                let uh: f64 = (0..4).map(|p| n[p] * field[conn[p]]).sum();
                let u = exact(x, y);
                let w = wx * wy * det_j;
                err2 += w * (uh - u) * (uh - u);
                norm2 += w * u * u;
            }
        }
    }
    (err2 / norm2).sqrt()
}

/// Relative max-norm distance between two nodal fields on shared nodes.
pub fn rel_linf_error(field_a: &[f64], field_b: &[f64]) -> f64 {
    assert_eq!(field_a.len(), field_b.len());
    let scale = field_b.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let diff = field_a
        .iter()
        .zip(field_b)
        .fold(0.0f64, |m, (&a, &b)| m.max((a - b).abs()));
    diff / scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::SideTag;
    use std::f64::consts::PI;

    fn dirichlet_tags() -> [SideTag; 4] {
        [
            SideTag::dirichlet(),
            SideTag::dirichlet(),
            SideTag::dirichlet(),
            SideTag::dirichlet(),
        ]
    }

    fn poisson_unit_square(n: usize) -> GlobalProblem {
        // -Laplace(u) = f with u = sin(pi x) sin(pi y)
        GlobalProblem {
            mesh: StructuredMesh::rectangle((0.0, 0.0), (1.0, 1.0), n, n, dirichlet_tags()).unwrap(),
            diffusion: ParamField::constant(1.0),
            source: ParamField::new(|x, y, _| 2.0 * PI * PI * (PI * x).sin() * (PI * y).sin()),
            neumann: Vec::new(),
            exact: Some(ParamField::new(|x, y, _| (PI * x).sin() * (PI * y).sin())),
        }
    }

    #[test]
    fn zero_source_gives_zero_field() {
        let gp = GlobalProblem {
            mesh: StructuredMesh::rectangle((0.0, 0.0), (1.0, 1.0), 4, 4, dirichlet_tags()).unwrap(),
            diffusion: ParamField::constant(1.0),
            source: ParamField::constant(0.0),
            neumann: Vec::new(),
            exact: None,
        };
        let u = full_order_solve(&gp, &[]).unwrap();
        assert!(u.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn q1_l2_error_is_second_order() {
        let mut errors = Vec::new();
        for n in [8usize, 16, 32] {
            let gp = poisson_unit_square(n);
            let u = full_order_solve(&gp, &[]).unwrap();
            let exact = gp.exact.as_ref().unwrap();
            errors.push(rel_l2_error(&u, |x, y| exact.eval(x, y, &[]), &gp.mesh));
        }
        for w in errors.windows(2) {
            let ratio = w[0] / w[1];
            assert!((3.0..5.0).contains(&ratio), "ratio {ratio} outside [3, 5]");
        }
    }

    #[test]
    fn error_norm_homogeneity() {
        let gp = poisson_unit_square(8);
        let u = full_order_solve(&gp, &[]).unwrap();
        let exact = gp.exact.as_ref().unwrap();
        let doubled: Vec<f64> = u.iter().map(|v| 2.0 * v).collect();
        // relative L2 error of 2u against u(~=double of exact) minus the
        // discretization error: stays close to 1
        let e = rel_l2_error(&doubled, |x, y| exact.eval(x, y, &[]), &gp.mesh);
        assert!((e - 1.0).abs() < 0.05, "error {e}");
    }

    #[test]
    fn linf_error_reads_single_perturbation() {
        let a = vec![1.0, 2.0, -4.0, 0.5];
        let mut b = a.clone();
        b[2] += 0.1;
        // max |a-b| = 0.1, max |b| = 3.9
        let e = rel_linf_error(&a, &b);
        assert!((e - 0.1 / 3.9).abs() < 1e-12);
    }

    fn bidomain_subdomains(nx_total: usize, overlap_cells: usize) -> Vec<Subdomain> {
        // unit-height strip (0,2)x(0,1) split at x=1 with symmetric overlap
        let h = 2.0 / nx_total as f64;
        let split = nx_total / 2;
        let left_cells = split + overlap_cells;
        let right_cells = nx_total - split + overlap_cells;
        let ny = (1.0 / h).round() as usize;
        let mesh1 = StructuredMesh::rectangle(
            (0.0, 0.0),
            (left_cells as f64 * h, 1.0),
            left_cells,
            ny,
            [
                SideTag::dirichlet(),
                SideTag::interface("right"),
                SideTag::dirichlet(),
                SideTag::dirichlet(),
            ],
        )
        .unwrap();
        let x0 = (split - overlap_cells) as f64 * h;
        let mesh2 = StructuredMesh::rectangle(
            (x0, 0.0),
            (2.0 - x0, 1.0),
            right_cells,
            ny,
            [
                SideTag::interface("left"),
                SideTag::dirichlet(),
                SideTag::dirichlet(),
                SideTag::dirichlet(),
            ],
        )
        .unwrap();
        vec![
            Subdomain::from_mesh("left", mesh1),
            Subdomain::from_mesh("right", mesh2),
        ]
    }

    #[test]
    fn schwarz_zero_data_converges_immediately() {
        let sds = bidomain_subdomains(20, 1);
        let run = alternating_schwarz(
            &sds,
            &ParamField::constant(1.0),
            &ParamField::constant(0.0),
            &[],
            &[],
            1e-6,
            50,
            None,
        )
        .unwrap();
        assert_eq!(run.iters, 1);
        for f in &run.fields {
            assert!(f.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn schwarz_agrees_with_monolithic_solve() {
        let sds = bidomain_subdomains(20, 2);
        let nu = ParamField::constant(1.0);
        let s = ParamField::constant(1.0);
        let run = alternating_schwarz(&sds, &nu, &s, &[], &[], 1e-8, 500, None).unwrap();

        let global = GlobalProblem {
            mesh: StructuredMesh::rectangle((0.0, 0.0), (2.0, 1.0), 20, 10, dirichlet_tags()).unwrap(),
            diffusion: nu,
            source: s,
            neumann: Vec::new(),
            exact: None,
        };
        let u = full_order_solve(&global, &[]).unwrap();

        // compare on the nodes of each subdomain
        let mut worst = 0.0f64;
        for (sd, field) in sds.iter().zip(&run.fields) {
            for node in 0..sd.mesh.n_nodes() {
                let (x, y) = sd.mesh.coords(node);
                let g = global.mesh.node_at_coords(x, y, 1e-10).unwrap();
                worst = worst.max((field[node] - u[g]).abs());
            }
        }
        assert!(worst <= 1e-5, "l_inf disagreement {worst}");
    }

    #[test]
    fn schwarz_restarts_from_converged_traces_in_two_sweeps() {
        let sds = bidomain_subdomains(20, 1);
        let nu = ParamField::constant(1.0);
        let s = ParamField::constant(1.0);
        let run = alternating_schwarz(&sds, &nu, &s, &[], &[], 1e-10, 1000, None).unwrap();
        let rerun =
            alternating_schwarz(&sds, &nu, &s, &[], &[], 1e-10, 10, Some(&run.traces)).unwrap();
        assert!(rerun.iters <= 2, "took {} sweeps", rerun.iters);
    }

    #[test]
    fn schwarz_iterations_decrease_with_overlap() {
        let nu = ParamField::constant(1.0);
        let s = ParamField::new(|x, y, _| (x * y).sin() + 1.0);
        let mut iters = Vec::new();
        for overlap_cells in [1usize, 2, 3] {
            let sds = bidomain_subdomains(40, overlap_cells);
            let run = alternating_schwarz(&sds, &nu, &s, &[], &[], 1e-8, 2000, None).unwrap();
            iters.push(run.iters);
        }
        assert!(iters[1] <= iters[0], "iters {iters:?}");
        assert!(iters[2] <= iters[1], "iters {iters:?}");
    }
}
