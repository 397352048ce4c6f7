//! Online phase: the substructured interface system over the trace
//! coefficients, solved by matrix-free GMRES.
//!
//! Building a [`SchwarzProblem`] evaluates every surrogate once at the
//! requested parameter point; each GMRES iteration then only forms linear
//! combinations of those cached nodal vectors and restricts them through
//! precomputed node maps. No FEM system is assembled or factorized here.

use crate::fem::StructuredMesh;
use crate::linalg::{gmres, GmresConfig, GmresResult, LinalgError};
use crate::offline::SurrogateModel;
use crate::separated::SeparatedError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OnlineError {
    #[error("no value given for parameter `{0}`")]
    MissingParameter(String),
    #[error(transparent)]
    Separated(#[from] SeparatedError),
    #[error("subdomain `{subdomain}` references unknown neighbor `{neighbor}`")]
    UnknownNeighbor { subdomain: String, neighbor: String },
    #[error("interface node of `{target}` at ({x}, {y}) has no matching node in `{neighbor}`")]
    NodeMatch {
        target: String,
        neighbor: String,
        x: f64,
        y: f64,
    },
    #[error("lambda vector has length {got}, expected {expected}")]
    LambdaLength { got: usize, expected: usize },
    #[error("unknown subdomain id `{0}`")]
    UnknownSubdomain(String),
    #[error("incompatible meshes: {0}")]
    MeshIncompatible(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("interface GMRES did not converge in {iters} iterations (residual {residual:.3e})")]
    NotConverged {
        iters: usize,
        residual: f64,
        history: Vec<f64>,
    },
}

/// Node correspondences realizing the restriction of a neighbor's nodal
/// field onto one subdomain's interface block.
#[derive(Debug, Clone)]
pub struct InterfaceMap {
    /// Subdomain whose field is restricted.
    pub source: String,
    /// Subdomain whose interface receives the values.
    pub target: String,
    /// (node index in the source mesh, position in the stacked Lambda
    /// vector of the target).
    pub pairs: Vec<(usize, usize)>,
}

struct ModelCache {
    u0: Vec<f64>,
    uq: Vec<Vec<f64>>,
}

/// The assembled online coupling for fixed parameter values.
pub struct SchwarzProblem {
    models: Vec<SurrogateModel>,
    maps: Vec<InterfaceMap>,
    mu: Vec<(String, f64)>,
    gmres_cfg: GmresConfig,
    cache: Vec<ModelCache>,
    /// offset of each model's Lambda block in the stacked vector
    offsets: Vec<usize>,
    total_lambda: usize,
    /// map source model index, paired with `maps`
    map_source_index: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct InterfaceSolution {
    pub lambda: Vec<f64>,
    pub iters: usize,
    pub residual_history: Vec<f64>,
}

/// Global field reconstructed from the converged trace coefficients.
#[derive(Debug, Clone)]
pub struct GlobalField {
    pub mesh: StructuredMesh,
    pub values: Vec<f64>,
    /// Per-subdomain nodal fields (same order as the models).
    pub per_subdomain: Vec<Vec<f64>>,
    /// Max disagreement between subdomain fields on shared (overlap) nodes.
    pub overlap_mismatch_linf: f64,
}

impl SchwarzProblem {
    /// Evaluate all surrogates at `mu` (an assignment by axis name) and
    /// build the interface maps by coordinate matching. Every model's axes
    /// must be covered by the assignment and lie inside its grid box.
    pub fn new(
        models: Vec<SurrogateModel>,
        mu: &[(String, f64)],
        gmres_cfg: GmresConfig,
    ) -> Result<Self, OnlineError> {
        let mut cache = Vec::with_capacity(models.len());
        for model in &models {
            let values: Vec<f64> = model
                .grid
                .axes()
                .iter()
                .map(|a| {
                    mu.iter()
                        .find(|(n, _)| *n == a.name)
                        .map(|&(_, v)| v)
                        .ok_or_else(|| OnlineError::MissingParameter(a.name.clone()))
                })
                .collect::<Result<_, _>>()?;
            let u0 = model.u0.evaluate(&values)?;
            let uq: Result<Vec<Vec<f64>>, SeparatedError> =
                model.uq.iter().map(|t| t.evaluate(&values)).collect();
            cache.push(ModelCache { u0, uq: uq? });
        }

        let mut offsets = Vec::with_capacity(models.len());
        let mut total = 0usize;
        for model in &models {
            offsets.push(total);
            total += model.subdomain.n_interface_nodes();
        }

        let mut maps = Vec::new();
        let mut map_source_index = Vec::new();
        for (i, model) in models.iter().enumerate() {
            let sd = &model.subdomain;
            let block_offsets = sd.lambda_offsets();
            for (spec, &block_offset) in sd.interfaces.iter().zip(&block_offsets) {
                let j = models
                    .iter()
                    .position(|m| m.subdomain.id == spec.neighbor)
                    .ok_or_else(|| OnlineError::UnknownNeighbor {
                        subdomain: sd.id.clone(),
                        neighbor: spec.neighbor.clone(),
                    })?;
                let source_mesh = &models[j].subdomain.mesh;
                let tol = 1e-9 * source_mesh.hx().min(source_mesh.hy());
                let mut pairs = Vec::with_capacity(spec.nodes.len());
                for (pos, &node) in spec.nodes.iter().enumerate() {
                    let (x, y) = sd.mesh.coords(node);
                    let source_node = source_mesh.node_at_coords(x, y, tol).ok_or_else(|| {
                        OnlineError::NodeMatch {
                            target: sd.id.clone(),
                            neighbor: spec.neighbor.clone(),
                            x,
                            y,
                        }
                    })?;
                    pairs.push((source_node, offsets[i] + block_offset + pos));
                }
                maps.push(InterfaceMap {
                    source: spec.neighbor.clone(),
                    target: sd.id.clone(),
                    pairs,
                });
                map_source_index.push(j);
            }
        }

        Ok(Self {
            models,
            maps,
            mu: mu.to_vec(),
            gmres_cfg,
            cache,
            offsets,
            total_lambda: total,
            map_source_index,
        })
    }

    pub fn models(&self) -> &[SurrogateModel] {
        &self.models
    }

    pub fn maps(&self) -> &[InterfaceMap] {
        &self.maps
    }

    pub fn mu(&self) -> &[(String, f64)] {
        &self.mu
    }

    pub fn lambda_len(&self) -> usize {
        self.total_lambda
    }

    /// Cached evaluation of the source-problem surrogate of one subdomain.
    pub fn u0_at_mu(&self, index: usize) -> &[f64] {
        &self.cache[index].u0
    }

    fn model_index(&self, id: &str) -> Result<usize, OnlineError> {
        self.models
            .iter()
            .position(|m| m.subdomain.id == id)
            .ok_or_else(|| OnlineError::UnknownSubdomain(id.to_string()))
    }

    /// The local PGD operator: the linear combination of the cached trace
    /// basis evaluations with coefficients `lambda_j`, as a nodal field.
    pub fn pgd_operator_apply(&self, subdomain: &str, lambda_j: &[f64]) -> Result<Vec<f64>, OnlineError> {
        let j = self.model_index(subdomain)?;
        self.apply_by_index(j, lambda_j)
    }

    fn apply_by_index(&self, j: usize, lambda_j: &[f64]) -> Result<Vec<f64>, OnlineError> {
        let cache = &self.cache[j];
        if lambda_j.len() != cache.uq.len() {
            return Err(OnlineError::LambdaLength {
                got: lambda_j.len(),
                expected: cache.uq.len(),
            });
        }
        let n = self.models[j].subdomain.mesh.n_nodes();
        let mut field = vec![0.0; n];
        for (&l, uq) in lambda_j.iter().zip(&cache.uq) {
            if l != 0.0 {
                crate::linalg::axpy(l, uq, &mut field);
            }
        }
        Ok(field)
    }

    fn lambda_block<'a>(&self, lambda: &'a [f64], i: usize) -> &'a [f64] {
        let start = self.offsets[i];
        let len = self.models[i].subdomain.n_interface_nodes();
        &lambda[start..start + len]
    }

    /// One application of the substructured interface operator: block `i`
    /// is `Lambda_i` minus the restriction of the neighbor's trace-basis
    /// combination. The `u0` part belongs to the right-hand side, not here.
    pub fn interface_matvec(&self, lambda: &[f64]) -> Vec<f64> {
        assert_eq!(lambda.len(), self.total_lambda, "lambda length mismatch");
        let fields: Vec<Vec<f64>> = (0..self.models.len())
            .map(|j| {
                self.apply_by_index(j, self.lambda_block(lambda, j))
                    .expect("cached lengths agree")
            })
            .collect();
        let mut out = lambda.to_vec();
        for (map, &j) in self.maps.iter().zip(&self.map_source_index) {
            for &(source_node, pos) in &map.pairs {
                out[pos] -= fields[j][source_node];
            }
        }
        out
    }

    /// Right-hand side: the restriction of each neighbor's `u0` evaluation.
    pub fn interface_rhs(&self) -> Vec<f64> {
        let mut rhs = vec![0.0; self.total_lambda];
        for (map, &j) in self.maps.iter().zip(&self.map_source_index) {
            for &(source_node, pos) in &map.pairs {
                rhs[pos] = self.cache[j].u0[source_node];
            }
        }
        rhs
    }

    /// Solve the interface system by matrix-free GMRES.
    pub fn solve_interface(&self) -> Result<InterfaceSolution, OnlineError> {
        let rhs = self.interface_rhs();
        let result: GmresResult = gmres(|v| self.interface_matvec(v), &rhs, &self.gmres_cfg)?;
        if !result.converged {
            let residual = result.residual_history.last().copied().unwrap_or(f64::NAN);
            return Err(OnlineError::NotConverged {
                iters: result.iters,
                residual,
                history: result.residual_history,
            });
        }
        Ok(InterfaceSolution {
            lambda: result.x,
            iters: result.iters,
            residual_history: result.residual_history,
        })
    }

    /// Per-subdomain field `u0 + sum_q Lambda_q uq[q]` at the cached `mu`.
    pub fn subdomain_field(&self, i: usize, lambda: &[f64]) -> Vec<f64> {
        let mut field = self
            .apply_by_index(i, self.lambda_block(lambda, i))
            .expect("cached lengths agree");
        crate::linalg::axpy(1.0, &self.cache[i].u0, &mut field);
        field
    }

    /// Assemble the global field on the union mesh. Overlap nodes take the
    /// value of the first-listed subdomain; the returned diagnostic reports
    /// the worst disagreement between subdomains on shared nodes.
    pub fn reconstruct_global(&self, lambda: &[f64]) -> Result<GlobalField, OnlineError> {
        if lambda.len() != self.total_lambda {
            return Err(OnlineError::LambdaLength {
                got: lambda.len(),
                expected: self.total_lambda,
            });
        }
        let mesh = self.union_mesh()?;
        let per_subdomain: Vec<Vec<f64>> = (0..self.models.len())
            .map(|i| self.subdomain_field(i, lambda))
            .collect();

        let mut values = vec![f64::NAN; mesh.n_nodes()];
        let mut mismatch = 0.0f64;
        let tol = 1e-9 * mesh.hx().min(mesh.hy());
        for (model, field) in self.models.iter().zip(&per_subdomain) {
            for node in 0..model.subdomain.mesh.n_nodes() {
                let (x, y) = model.subdomain.mesh.coords(node);
                let g = mesh.node_at_coords(x, y, tol).ok_or_else(|| {
                    OnlineError::MeshIncompatible(format!(
                        "node ({x}, {y}) of `{}` is off the union lattice",
                        model.subdomain.id
                    ))
                })?;
                if values[g].is_nan() {
                    values[g] = field[node];
                } else {
                    mismatch = mismatch.max((values[g] - field[node]).abs());
                }
            }
        }
        if let Some(hole) = values.iter().position(|v| v.is_nan()) {
            let (x, y) = mesh.coords(hole);
            return Err(OnlineError::MeshIncompatible(format!(
                "union mesh node ({x}, {y}) is covered by no subdomain"
            )));
        }

        Ok(GlobalField {
            mesh,
            values,
            per_subdomain,
            overlap_mismatch_linf: mismatch,
        })
    }

    fn union_mesh(&self) -> Result<StructuredMesh, OnlineError> {
        let first = &self.models[0].subdomain.mesh;
        let (hx, hy) = (first.hx(), first.hy());
        let mut x0 = f64::INFINITY;
        let mut x1 = f64::NEG_INFINITY;
        let mut y0 = f64::INFINITY;
        let mut y1 = f64::NEG_INFINITY;
        for model in &self.models {
            let m = &model.subdomain.mesh;
            if (m.hx() - hx).abs() > 1e-12 * hx || (m.hy() - hy).abs() > 1e-12 * hy {
                return Err(OnlineError::MeshIncompatible(format!(
                    "subdomain `{}` has a different mesh size",
                    model.subdomain.id
                )));
            }
            let (ox, oy) = m.origin();
            let (ex, ey) = m.extent();
            x0 = x0.min(ox);
            y0 = y0.min(oy);
            x1 = x1.max(ox + ex);
            y1 = y1.max(oy + ey);
        }
        let nx = ((x1 - x0) / hx).round() as usize;
        let ny = ((y1 - y0) / hy).round() as usize;
        let tag = crate::fem::SideTag::neumann("union_boundary");
        StructuredMesh::rectangle(
            (x0, y0),
            (x1 - x0, y1 - y0),
            nx.max(1),
            ny.max(1),
            [tag.clone(), tag.clone(), tag.clone(), tag],
        )
        .map_err(|e| OnlineError::MeshIncompatible(e.to_string()))
    }
}
