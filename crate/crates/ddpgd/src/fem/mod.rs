//! Structured quadrilateral meshes on axis-aligned rectangles with bilinear
//! (Q1) Lagrange elements.
//!
//! Nodes are numbered row-major, `id = iy * (nx + 1) + ix`, which keeps the
//! matrix bandwidth at `nx + 2` under the natural ordering. Every boundary
//! edge carries exactly one tag: exterior Dirichlet, exterior Neumann, or
//! interface (toward a named neighbor).

mod assemble;

pub use assemble::{
    assemble_load, assemble_neumann, assemble_stiffness, eliminate_dirichlet, DirichletReduction,
};

use std::fmt;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FemError {
    #[error("unknown boundary tag `{0}`")]
    UnknownTag(String),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
}

/// 2-point Gauss rule on [-1, 1] (exact through degree 3).
pub const GAUSS_2: [(f64, f64); 2] = [(-0.577_350_269_189_625_8, 1.0), (0.577_350_269_189_625_8, 1.0)];

/// 3-point Gauss rule on [-1, 1] (exact through degree 5), used for error
/// quadrature.
pub const GAUSS_3: [(f64, f64); 3] = [
    (-0.774_596_669_241_483_4, 0.555_555_555_555_555_6),
    (0.0, 0.888_888_888_888_888_9),
    (0.774_596_669_241_483_4, 0.555_555_555_555_555_6),
];

/// Q1 shape functions at (xi, eta) in [-1, 1]^2, local node order
/// (SW, SE, NE, NW).
pub fn shape(xi: f64, eta: f64) -> [f64; 4] {
    [
        0.25 * (1.0 - xi) * (1.0 - eta),
        0.25 * (1.0 + xi) * (1.0 - eta),
        0.25 * (1.0 + xi) * (1.0 + eta),
        0.25 * (1.0 - xi) * (1.0 + eta),
    ]
}

/// Reference-space shape gradients (d/dxi, d/deta) at (xi, eta).
pub fn shape_grad(xi: f64, eta: f64) -> [(f64, f64); 4] {
    [
        (-0.25 * (1.0 - eta), -0.25 * (1.0 - xi)),
        (0.25 * (1.0 - eta), -0.25 * (1.0 + xi)),
        (0.25 * (1.0 + eta), 0.25 * (1.0 + xi)),
        (-0.25 * (1.0 + eta), 0.25 * (1.0 - xi)),
    ]
}

/// A spatial coefficient or data factor, evaluable anywhere on the mesh's
/// bounding box.
#[derive(Clone)]
pub struct ScalarField {
    f: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    description: String,
}

impl ScalarField {
    pub fn new(
        description: impl Into<String>,
        f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            f: Arc::new(f),
            description: description.into(),
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(format!("{c}"), move |_, _| c)
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        (self.f)(x, y)
    }

    pub fn description(&self) -> &str {
        &self.description
    }
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ScalarField({})", self.description)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum BoundaryKind {
    ExteriorDirichlet,
    ExteriorNeumann,
    Interface,
}

/// One element edge on the mesh boundary.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub kind: BoundaryKind,
    pub label: String,
}

/// Tag applied to a whole rectangle side at construction time.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SideTag {
    pub kind: BoundaryKind,
    pub label: String,
}

impl SideTag {
    pub fn dirichlet() -> Self {
        Self {
            kind: BoundaryKind::ExteriorDirichlet,
            label: "dirichlet".into(),
        }
    }

    pub fn neumann(label: impl Into<String>) -> Self {
        Self {
            kind: BoundaryKind::ExteriorNeumann,
            label: label.into(),
        }
    }

    pub fn interface(label: impl Into<String>) -> Self {
        Self {
            kind: BoundaryKind::Interface,
            label: label.into(),
        }
    }
}

/// Sides of a rectangle, in the fixed order used by constructors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

pub const SIDES: [Side; 4] = [Side::Left, Side::Right, Side::Bottom, Side::Top];

/// Kind of boundary condition attached to a tag.
#[derive(Debug, Clone)]
pub enum BoundaryCondition {
    /// Homogeneous Dirichlet on every edge with the tag.
    DirichletZero { tag: String },
    /// Dirichlet trace supplied at solve time on an interface tag.
    DirichletTrace { tag: String },
    /// Prescribed co-normal flux on every edge with the tag.
    NeumannFlux { tag: String, data: ScalarField },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuredMesh {
    origin: (f64, f64),
    extent: (f64, f64),
    nx: usize,
    ny: usize,
    node_coords: Vec<(f64, f64)>,
    element_connectivity: Vec<[usize; 4]>,
    boundary_edges: Vec<BoundaryEdge>,
}

impl StructuredMesh {
    /// Uniform `nx` x `ny` quad mesh of the rectangle
    /// `[origin.0, origin.0 + extent.0] x [origin.1, origin.1 + extent.1]`,
    /// with one tag per side in the order (left, right, bottom, top).
    pub fn rectangle(
        origin: (f64, f64),
        extent: (f64, f64),
        nx: usize,
        ny: usize,
        side_tags: [SideTag; 4],
    ) -> Result<Self, FemError> {
        if nx == 0 || ny == 0 {
            return Err(FemError::InvalidMesh("nx and ny must be positive".into()));
        }
        if extent.0 <= 0.0 || extent.1 <= 0.0 {
            return Err(FemError::InvalidMesh("extent must be positive".into()));
        }
        let hx = extent.0 / nx as f64;
        let hy = extent.1 / ny as f64;
        let node = |ix: usize, iy: usize| iy * (nx + 1) + ix;

        let mut node_coords = Vec::with_capacity((nx + 1) * (ny + 1));
        for iy in 0..=ny {
            for ix in 0..=nx {
                node_coords.push((origin.0 + ix as f64 * hx, origin.1 + iy as f64 * hy));
            }
        }

        let mut element_connectivity = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            for ix in 0..nx {
                element_connectivity.push([
                    node(ix, iy),
                    node(ix + 1, iy),
                    node(ix + 1, iy + 1),
                    node(ix, iy + 1),
                ]);
            }
        }

        let [left, right, bottom, top] = side_tags;
        let mut boundary_edges = Vec::with_capacity(2 * (nx + ny));
        for iy in 0..ny {
            boundary_edges.push(BoundaryEdge {
                nodes: [node(0, iy), node(0, iy + 1)],
                kind: left.kind,
                label: left.label.clone(),
            });
            boundary_edges.push(BoundaryEdge {
                nodes: [node(nx, iy), node(nx, iy + 1)],
                kind: right.kind,
                label: right.label.clone(),
            });
        }
        for ix in 0..nx {
            boundary_edges.push(BoundaryEdge {
                nodes: [node(ix, 0), node(ix + 1, 0)],
                kind: bottom.kind,
                label: bottom.label.clone(),
            });
            boundary_edges.push(BoundaryEdge {
                nodes: [node(ix, ny), node(ix + 1, ny)],
                kind: top.kind,
                label: top.label.clone(),
            });
        }

        Ok(Self {
            origin,
            extent,
            nx,
            ny,
            node_coords,
            element_connectivity,
            boundary_edges,
        })
    }

    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }

    pub fn extent(&self) -> (f64, f64) {
        self.extent
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn hx(&self) -> f64 {
        self.extent.0 / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        self.extent.1 / self.ny as f64
    }

    pub fn n_nodes(&self) -> usize {
        self.node_coords.len()
    }

    pub fn n_elements(&self) -> usize {
        self.element_connectivity.len()
    }

    pub fn coords(&self, node: usize) -> (f64, f64) {
        self.node_coords[node]
    }

    pub fn node_coords(&self) -> &[(f64, f64)] {
        &self.node_coords
    }

    pub fn elements(&self) -> &[[usize; 4]] {
        &self.element_connectivity
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    /// Node at the lattice position closest to `(x, y)`, if within `tol`.
    pub fn node_at_coords(&self, x: f64, y: f64, tol: f64) -> Option<usize> {
        let ix = ((x - self.origin.0) / self.hx()).round();
        let iy = ((y - self.origin.1) / self.hy()).round();
        if ix < 0.0 || iy < 0.0 || ix > self.nx as f64 || iy > self.ny as f64 {
            return None;
        }
        let (ix, iy) = (ix as usize, iy as usize);
        let id = iy * (self.nx + 1) + ix;
        let (cx, cy) = self.node_coords[id];
        if (cx - x).abs() <= tol && (cy - y).abs() <= tol {
            Some(id)
        } else {
            None
        }
    }

    /// All nodes lying on an exterior-Dirichlet edge, ascending.
    pub fn dirichlet_nodes(&self) -> Vec<usize> {
        let mut nodes: Vec<usize> = self
            .boundary_edges
            .iter()
            .filter(|e| e.kind == BoundaryKind::ExteriorDirichlet)
            .flat_map(|e| e.nodes)
            .collect();
        nodes.sort_unstable();
        nodes.dedup();
        nodes
    }

    /// Nodes on the interface edges with the given label, excluding nodes
    /// shared with the exterior-Dirichlet boundary (those keep the
    /// homogeneous condition), ordered lexicographically by coordinate.
    pub fn interface_nodes(&self, label: &str) -> Vec<usize> {
        let dirichlet = self.dirichlet_nodes();
        let mut nodes: Vec<usize> = self
            .boundary_edges
            .iter()
            .filter(|e| e.kind == BoundaryKind::Interface && e.label == label)
            .flat_map(|e| e.nodes)
            .filter(|n| dirichlet.binary_search(n).is_err())
            .collect();
        nodes.sort_unstable();
        nodes.dedup();
        nodes.sort_by(|&a, &b| {
            let (xa, ya) = self.node_coords[a];
            let (xb, yb) = self.node_coords[b];
            (xa, ya).partial_cmp(&(xb, yb)).expect("finite coordinates")
        });
        nodes
    }

    /// Distinct interface labels present on this mesh, in first-seen order.
    pub fn interface_labels(&self) -> Vec<String> {
        let mut labels = Vec::new();
        for e in &self.boundary_edges {
            if e.kind == BoundaryKind::Interface && !labels.contains(&e.label) {
                labels.push(e.label.clone());
            }
        }
        labels
    }

    pub(crate) fn edges_with_label(&self, label: &str) -> Vec<&BoundaryEdge> {
        self.boundary_edges
            .iter()
            .filter(|e| e.label == label)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_mesh(nx: usize, ny: usize) -> StructuredMesh {
        StructuredMesh::rectangle(
            (0.0, 0.0),
            (1.0, 1.0),
            nx,
            ny,
            [
                SideTag::dirichlet(),
                SideTag::interface("gamma"),
                SideTag::dirichlet(),
                SideTag::dirichlet(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn counts_and_coords() {
        let m = unit_mesh(2, 2);
        assert_eq!(m.n_nodes(), 9);
        assert_eq!(m.n_elements(), 4);
        assert_eq!(m.coords(4), (0.5, 0.5));
        assert_eq!(m.boundary_edges().len(), 8);
    }

    #[test]
    fn interface_excludes_dirichlet_corners() {
        let m = unit_mesh(2, 2);
        // right edge has 3 nodes; both corners touch Dirichlet edges
        assert_eq!(m.interface_nodes("gamma"), vec![5]);
    }

    #[test]
    fn interface_nodes_empty_without_tag() {
        let m = unit_mesh(2, 2);
        assert!(m.interface_nodes("nope").is_empty());
    }

    #[test]
    fn bidomain_interface_has_19_nodes() {
        // Omega_1 = (0, 1.05) x (0, 1), h = 0.05: 21 gridline nodes minus
        // the two Dirichlet corners.
        let m = StructuredMesh::rectangle(
            (0.0, 0.0),
            (1.05, 1.0),
            21,
            20,
            [
                SideTag::dirichlet(),
                SideTag::interface("gamma1"),
                SideTag::dirichlet(),
                SideTag::dirichlet(),
            ],
        )
        .unwrap();
        let nodes = m.interface_nodes("gamma1");
        assert_eq!(nodes.len(), 19);
        // ascending y along the vertical interface
        for w in nodes.windows(2) {
            assert!(m.coords(w[0]).1 < m.coords(w[1]).1);
        }
    }

    #[test]
    fn node_lookup_by_coords() {
        let m = unit_mesh(4, 4);
        assert_eq!(m.node_at_coords(0.25, 0.5, 1e-12), Some(11));
        assert_eq!(m.node_at_coords(0.26, 0.5, 1e-12), None);
        assert_eq!(m.node_at_coords(2.0, 0.5, 1e-12), None);
    }
}
