//! Offline phase: per-subdomain surrogate models.
//!
//! For a subdomain with N interface nodes, the offline phase solves N + 1
//! independent parametric problems: one carrying all source and Neumann
//! data with zero trace (`u0`), and one per trace basis function with zero
//! source (`uq`, lifted by the nodal hat at its interface node). Any local
//! solution with trace coefficients `L` is then `u0 + sum_q L_q uq[q]`.

mod persist;

pub use persist::{load_model, save_model, ModelIoError, FORMAT_VERSION};

use crate::fem::StructuredMesh;
use crate::pgd::{
    pgd_solve, DataTerm, LiftTerm, NeumannTerm, PgdConfig, PgdError, SeparatedProblem,
};
use crate::separated::{compress, ParamGrid, SeparatedTensor, SpatialNorm};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OfflineError {
    #[error("subproblem {index} failed: {source}")]
    Subproblem { index: usize, source: PgdError },
    #[error("subdomain `{0}` has no interface nodes")]
    NoInterfaces(String),
}

/// One interface of a subdomain: the neighbor it couples to and the ordered
/// trace nodes (ascending coordinate, as produced by
/// [`StructuredMesh::interface_nodes`]).
#[derive(Debug, Clone, PartialEq)]
pub struct InterfaceSpec {
    pub neighbor: String,
    pub label: String,
    pub nodes: Vec<usize>,
}

/// A subdomain of the decomposition. Interfaces are single straight
/// segments, each shared with exactly one neighbor (no cross-points).
#[derive(Debug, Clone, PartialEq)]
pub struct Subdomain {
    pub id: String,
    pub mesh: StructuredMesh,
    pub exterior_dirichlet_nodes: Vec<usize>,
    pub interfaces: Vec<InterfaceSpec>,
}

impl Subdomain {
    /// Derive the boundary classification from the mesh tags. Interface
    /// labels name the neighboring subdomain.
    pub fn from_mesh(id: impl Into<String>, mesh: StructuredMesh) -> Self {
        let exterior_dirichlet_nodes = mesh.dirichlet_nodes();
        let interfaces = mesh
            .interface_labels()
            .into_iter()
            .map(|label| InterfaceSpec {
                neighbor: label.clone(),
                nodes: mesh.interface_nodes(&label),
                label,
            })
            .collect();
        Self {
            id: id.into(),
            mesh,
            exterior_dirichlet_nodes,
            interfaces,
        }
    }

    /// Total number of interface nodes (the length of the Lambda vector).
    pub fn n_interface_nodes(&self) -> usize {
        self.interfaces.iter().map(|i| i.nodes.len()).sum()
    }

    /// Interface nodes concatenated in the documented order (interfaces as
    /// listed, nodes ascending by coordinate within each).
    pub fn lambda_nodes(&self) -> Vec<usize> {
        self.interfaces.iter().flat_map(|i| i.nodes.iter().copied()).collect()
    }

    /// Offset of each interface's block within the Lambda vector.
    pub fn lambda_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.interfaces.len());
        let mut acc = 0;
        for spec in &self.interfaces {
            offsets.push(acc);
            acc += spec.nodes.len();
        }
        offsets
    }
}

/// The interface trace basis: restrictions of the FE nodal hats, one per
/// interface node, Kronecker-valued at the interface nodes.
#[derive(Debug, Clone)]
pub struct TraceBasis {
    /// Mesh node carrying each basis function, in Lambda order.
    pub nodes: Vec<usize>,
    n_mesh_nodes: usize,
}

impl TraceBasis {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodal vector of basis function `q` (the hat at its interface node).
    pub fn hat(&self, q: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.n_mesh_nodes];
        v[self.nodes[q]] = 1.0;
        v
    }
}

/// One basis function per interface node.
pub fn build_trace_basis(sd: &Subdomain) -> TraceBasis {
    TraceBasis {
        nodes: sd.lambda_nodes(),
        n_mesh_nodes: sd.mesh.n_nodes(),
    }
}

/// Problem data for one subdomain, all in separated form. The source and
/// Neumann terms feed only the `u0` problem; the diffusion is shared by all
/// subproblems.
#[derive(Debug, Clone)]
pub struct SubdomainData {
    pub diffusion: Vec<DataTerm>,
    pub source: Vec<DataTerm>,
    pub neumann: Vec<NeumannTerm>,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ModelMetadata {
    pub enrich_tol: f64,
    pub compress_tol: f64,
    pub fp_tol: f64,
    pub fp_max_iters: usize,
    pub seed: u64,
    /// Mode counts per subproblem (index 0 = u0), before compression.
    pub modes_before: Vec<usize>,
    /// Mode counts per subproblem after compression (uq counts include the
    /// lift mode).
    pub modes_after: Vec<usize>,
    /// Experiment name, when built from a named experiment.
    pub experiment: Option<String>,
    /// Wall-clock build time; informational only, never persisted.
    #[serde(skip)]
    pub build_seconds: f64,
}

/// Offline surrogate for one subdomain: `u0` plus one tensor per trace
/// basis function (each including its lift mode).
#[derive(Debug, Clone)]
pub struct SurrogateModel {
    pub subdomain: Subdomain,
    pub grid: ParamGrid,
    pub u0: SeparatedTensor,
    pub uq: Vec<SeparatedTensor>,
    pub metadata: ModelMetadata,
}

impl SurrogateModel {
    /// Check the Kronecker trace property and the zero-trace property of
    /// `u0` at the given parameter points. Exact by construction, so the
    /// tolerance only absorbs round-off of the evaluation itself.
    pub fn validate_at(&self, samples: &[Vec<f64>], tol: f64) -> Result<(), String> {
        let lambda_nodes = self.subdomain.lambda_nodes();
        for mu in samples {
            let u0 = self.u0.evaluate(mu).map_err(|e| e.to_string())?;
            for &n in lambda_nodes.iter().chain(&self.subdomain.exterior_dirichlet_nodes) {
                if u0[n].abs() > tol {
                    return Err(format!("u0 is {} at constrained node {n}", u0[n]));
                }
            }
            for (q, uq) in self.uq.iter().enumerate() {
                let field = uq.evaluate(mu).map_err(|e| e.to_string())?;
                for (r, &node) in lambda_nodes.iter().enumerate() {
                    let expected = if r == q { 1.0 } else { 0.0 };
                    if (field[node] - expected).abs() > tol {
                        return Err(format!(
                            "uq[{q}] is {} at interface node {r} (expected {expected})",
                            field[node]
                        ));
                    }
                }
                for &n in &self.subdomain.exterior_dirichlet_nodes {
                    if field[n].abs() > tol {
                        return Err(format!("uq[{q}] is {} at Dirichlet node {n}", field[n]));
                    }
                }
            }
        }
        Ok(())
    }

    /// Deterministic sample points for validation: grid corners and center.
    pub fn validation_samples(&self) -> Vec<Vec<f64>> {
        let lows: Vec<f64> = self.grid.axes().iter().map(|a| a.lower).collect();
        let highs: Vec<f64> = self.grid.axes().iter().map(|a| a.upper).collect();
        let mids: Vec<f64> = self
            .grid
            .axes()
            .iter()
            .map(|a| {
                let pts = a.points();
                pts[pts.len() / 2]
            })
            .collect();
        vec![lows, mids, highs]
    }
}

/// Deterministic per-subproblem seed: FNV-1a of the subdomain id and the
/// problem index, mixed with the base seed, so parallel scheduling cannot
/// change results.
pub fn subproblem_seed(base: u64, subdomain_id: &str, q: usize) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in subdomain_id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    for b in (q as u64).to_le_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^ base
}

/// Build the surrogate for one subdomain: solve the N + 1 subproblems
/// (in parallel when a rayon pool is available), compress each, and attach
/// the lift modes.
pub fn build_surrogate(
    sd: &Subdomain,
    grid: &ParamGrid,
    data: &SubdomainData,
    cfg: &PgdConfig,
    compress_tol: f64,
) -> Result<SurrogateModel, OfflineError> {
    let start = std::time::Instant::now();
    let basis = build_trace_basis(sd);
    let n_gamma = basis.len();
    if n_gamma == 0 {
        return Err(OfflineError::NoInterfaces(sd.id.clone()));
    }

    let mut fixed: Vec<usize> = sd.exterior_dirichlet_nodes.clone();
    fixed.extend(basis.nodes.iter().copied());
    fixed.sort_unstable();
    fixed.dedup();

    // problem 0 is u0 (all data, zero trace); problem q >= 1 lifts hat q-1
    let results: Result<Vec<(SeparatedTensor, usize)>, OfflineError> = (0..=n_gamma)
        .into_par_iter()
        .map(|index| {
            let (lift, fixed_zero, source, neumann) = if index == 0 {
                (None, fixed.clone(), data.source.clone(), data.neumann.clone())
            } else {
                let node = basis.nodes[index - 1];
                let fixed_zero: Vec<usize> = fixed.iter().copied().filter(|&n| n != node).collect();
                (
                    Some(LiftTerm {
                        spatial: basis.hat(index - 1),
                        parametric: Vec::new(),
                    }),
                    fixed_zero,
                    Vec::new(),
                    Vec::new(),
                )
            };
            let problem = SeparatedProblem {
                mesh: sd.mesh.clone(),
                grid: grid.clone(),
                diffusion_terms: data.diffusion.clone(),
                source_terms: source,
                neumann_terms: neumann,
                dirichlet_lift: lift.clone(),
                fixed_zero_nodes: fixed_zero,
            };
            let problem_cfg = PgdConfig {
                seed: subproblem_seed(cfg.seed, &sd.id, index),
                ..cfg.clone()
            };
            let solution = pgd_solve(&problem, &problem_cfg)
                .map_err(|source| OfflineError::Subproblem { index, source })?;
            let before = solution.tensor.rank();
            let compressed = compress(&solution.tensor, compress_tol, &SpatialNorm::NodalL2);
            let mut tensor = compressed.tensor;
            if let Some(lift) = lift {
                tensor.prepend_mode(crate::separated::Mode {
                    spatial: lift.spatial,
                    parametric: grid.axes().iter().map(|a| vec![1.0; a.n_points()]).collect(),
                });
            }
            let lift_count = usize::from(index > 0);
            Ok((tensor, before + lift_count))
        })
        .collect();
    let results = results?;

    let mut modes_before = Vec::with_capacity(n_gamma + 1);
    let mut modes_after = Vec::with_capacity(n_gamma + 1);
    let mut tensors = Vec::with_capacity(n_gamma + 1);
    for (tensor, before) in results {
        modes_before.push(before);
        modes_after.push(tensor.rank());
        tensors.push(tensor);
    }
    let u0 = tensors.remove(0);

    Ok(SurrogateModel {
        subdomain: sd.clone(),
        grid: grid.clone(),
        u0,
        uq: tensors,
        metadata: ModelMetadata {
            enrich_tol: cfg.enrich_tol,
            compress_tol,
            fp_tol: cfg.fp_tol,
            fp_max_iters: cfg.fp_max_iters,
            seed: cfg.seed,
            modes_before,
            modes_after,
            experiment: None,
            build_seconds: start.elapsed().as_secs_f64(),
        },
    })
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{ScalarField, SideTag};
    use crate::separated::ParamAxis;

    fn test_subdomain() -> Subdomain {
        let mesh = StructuredMesh::rectangle(
            (0.0, 0.0),
            (1.0, 1.0),
            4,
            4,
            [
                SideTag::dirichlet(),
                SideTag::interface("right_neighbor"),
                SideTag::dirichlet(),
                SideTag::dirichlet(),
            ],
        )
        .unwrap();
        Subdomain::from_mesh("test", mesh)
    }

    fn test_grid() -> ParamGrid {
        ParamGrid::new(vec![ParamAxis::new("mu", 1.0, 4.0, 0.5).unwrap()]).unwrap()
    }

    fn test_data(grid: &ParamGrid) -> SubdomainData {
        let mu = grid.axes()[0].points().to_vec();
        SubdomainData {
            diffusion: vec![
                DataTerm {
                    spatial: ScalarField::constant(1.0),
                    parametric: vec![vec![1.0; mu.len()]],
                },
                DataTerm {
                    spatial: ScalarField::new("x", |x, _| x),
                    parametric: vec![mu],
                },
            ],
            source: vec![DataTerm {
                spatial: ScalarField::constant(1.0),
                parametric: Vec::new(),
            }],
            neumann: Vec::new(),
        }
    }

    #[test]
    fn trace_basis_is_partition_of_unity() {
        let sd = test_subdomain();
        let basis = build_trace_basis(&sd);
        assert_eq!(basis.len(), 3); // 5 right-edge nodes minus 2 corners
        let mut sum = vec![0.0; sd.mesh.n_nodes()];
        for q in 0..basis.len() {
            for (s, h) in sum.iter_mut().zip(basis.hat(q)) {
                *s += h;
            }
        }
        for &node in &basis.nodes {
            assert_eq!(sum[node], 1.0);
        }
    }

    #[test]
    fn single_interface_node_has_one_basis_function() {
        let mesh = StructuredMesh::rectangle(
            (0.0, 0.0),
            (1.0, 1.0),
            2,
            2,
            [
                SideTag::dirichlet(),
                SideTag::interface("n"),
                SideTag::dirichlet(),
                SideTag::dirichlet(),
            ],
        )
        .unwrap();
        let sd = Subdomain::from_mesh("single", mesh);
        assert_eq!(build_trace_basis(&sd).len(), 1);
    }

    #[test]
    fn surrogate_has_kronecker_trace_property() {
        let sd = test_subdomain();
        let grid = test_grid();
        let model = build_surrogate(&sd, &grid, &test_data(&grid), &PgdConfig::default(), 1e-3).unwrap();
        assert_eq!(model.uq.len(), sd.n_interface_nodes());
        let samples = model.validation_samples();
        model.validate_at(&samples, 1e-12).unwrap();
    }

    #[test]
    fn zero_source_surrogate_has_zero_u0() {
        let sd = test_subdomain();
        let grid = test_grid();
        let data = SubdomainData {
            source: Vec::new(),
            ..test_data(&grid)
        };
        let model = build_surrogate(&sd, &grid, &data, &PgdConfig::default(), 1e-3).unwrap();
        assert_eq!(model.u0.rank(), 0);
        let field = model.u0.evaluate(&[2.5]).unwrap();
        assert!(field.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn superposition_solves_the_local_problem() {
        use crate::fem::{assemble_load, assemble_stiffness, eliminate_dirichlet};
        use crate::linalg::spd_solve;
        use rand::{Rng, SeedableRng};

        let sd = test_subdomain();
        let grid = test_grid();
        let model = build_surrogate(&sd, &grid, &test_data(&grid), &PgdConfig::default(), 1e-3).unwrap();

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let lambda_nodes = sd.lambda_nodes();
        for _ in 0..3 {
            let mu = *grid.axes()[0]
                .points()
                .get(rng.gen_range(0..grid.axes()[0].n_points()))
                .unwrap();
            let lambda: Vec<f64> = (0..lambda_nodes.len()).map(|_| rng.gen_range(-2.0..2.0)).collect();

            // surrogate superposition
            let mut combo = model.u0.evaluate(&[mu]).unwrap();
            for (l, uq) in lambda.iter().zip(&model.uq) {
                crate::linalg::axpy(*l, &uq.evaluate(&[mu]).unwrap(), &mut combo);
            }

            // direct solve with the same trace
            let nu = ScalarField::new("nu", move |x, _| 1.0 + mu * x);
            let k = assemble_stiffness(&sd.mesh, &nu);
            let b = assemble_load(&sd.mesh, &ScalarField::constant(1.0));
            let mut fixed: Vec<usize> = sd.exterior_dirichlet_nodes.clone();
            let mut values = vec![0.0; fixed.len()];
            fixed.extend(lambda_nodes.iter().copied());
            values.extend(lambda.iter().copied());
            let red = eliminate_dirichlet(&k, &b, &fixed, &values);
            let x = spd_solve(&red.matrix, &red.rhs).unwrap();
            let fem = red.expand(&x);

            let scale = crate::linalg::norm2(&fem).max(1e-30);
            let diff: f64 = combo
                .iter()
                .zip(&fem)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(diff / scale < 1e-3, "mu={mu}: rel residual {}", diff / scale);
        }
    }

    #[test]
    fn parallel_and_serial_builds_agree() {
        let sd = test_subdomain();
        let grid = test_grid();
        let data = test_data(&grid);
        let cfg = PgdConfig {
            seed: 7,
            ..PgdConfig::default()
        };
        let parallel = build_surrogate(&sd, &grid, &data, &cfg, 1e-3).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let serial = pool.install(|| build_surrogate(&sd, &grid, &data, &cfg, 1e-3).unwrap());
        assert_eq!(parallel.u0.modes().len(), serial.u0.modes().len());
        for (a, b) in parallel.uq.iter().zip(&serial.uq) {
            assert_eq!(a.modes().len(), b.modes().len());
            for (ma, mb) in a.modes().iter().zip(b.modes()) {
                assert_eq!(ma.spatial, mb.spatial);
                assert_eq!(ma.parametric, mb.parametric);
            }
        }
    }
}
