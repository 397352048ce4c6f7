//! Q1 assembly of stiffness, load and Neumann vectors, plus Dirichlet
//! elimination.
//!
//! Coefficients enter as spatial factors only; parametric factors are the
//! business of the separated/pgd modules. All quadrature is 2x2 Gauss per
//! element (2-point per boundary edge), exact for the bilinear products
//! appearing here.

use super::{shape, shape_grad, FemError, ScalarField, StructuredMesh, GAUSS_2};
use crate::counters;
use crate::linalg::SparseMatrix;

/// Stiffness matrix of `a(x) grad(phi_p) . grad(phi_q)` over all mesh nodes,
/// no boundary conditions applied. The sparsity pattern covers every element
/// coupling (explicit zeros kept) so matrices from the same mesh combine
/// entrywise.
pub fn assemble_stiffness(mesh: &StructuredMesh, a: &ScalarField) -> SparseMatrix {
    counters::record_assembly();
    let n = mesh.n_nodes();
    let hx = mesh.hx();
    let hy = mesh.hy();
    let det_j = hx * hy / 4.0;
    let mut triplets = Vec::with_capacity(mesh.n_elements() * 16);

    for conn in mesh.elements() {
        let (x0, y0) = mesh.coords(conn[0]);
        let mut k_e = [[0.0f64; 4]; 4];
        for &(xi, wx) in GAUSS_2.iter() {
            for &(eta, wy) in GAUSS_2.iter() {
                let x = x0 + (xi + 1.0) * 0.5 * hx;
                let y = y0 + (eta + 1.0) * 0.5 * hy;
                let coeff = a.eval(x, y) * wx * wy * det_j;
                let g = shape_grad(xi, eta);
                let gx: Vec<f64> = g.iter().map(|&(dxi, _)| dxi * 2.0 / hx).collect();
                let gy: Vec<f64> = g.iter().map(|&(_, deta)| deta * 2.0 / hy).collect();
                for p in 0..4 {
                    for q in 0..4 {
                        k_e[p][q] += coeff * (gx[p] * gx[q] + gy[p] * gy[q]);
                    }
                }
            }
        }
        for p in 0..4 {
            for q in 0..4 {
                triplets.push((conn[p], conn[q], k_e[p][q]));
            }
        }
    }
    SparseMatrix::from_triplets(n, n, triplets)
}

/// Load vector of `f(x) phi_p` over all mesh nodes.
pub fn assemble_load(mesh: &StructuredMesh, f: &ScalarField) -> Vec<f64> {
    counters::record_assembly();
    let hx = mesh.hx();
    let hy = mesh.hy();
    let det_j = hx * hy / 4.0;
    let mut b = vec![0.0; mesh.n_nodes()];

    for conn in mesh.elements() {
        let (x0, y0) = mesh.coords(conn[0]);
        for &(xi, wx) in GAUSS_2.iter() {
            for &(eta, wy) in GAUSS_2.iter() {
                let x = x0 + (xi + 1.0) * 0.5 * hx;
                let y = y0 + (eta + 1.0) * 0.5 * hy;
                let coeff = f.eval(x, y) * wx * wy * det_j;
                let n = shape(xi, eta);
                for p in 0..4 {
                    b[conn[p]] += coeff * n[p];
                }
            }
        }
    }
    b
}

/// Boundary contribution of `g phi_p` over the edges tagged `tag`.
pub fn assemble_neumann(
    mesh: &StructuredMesh,
    g: &ScalarField,
    tag: &str,
) -> Result<Vec<f64>, FemError> {
    counters::record_assembly();
    let edges = mesh.edges_with_label(tag);
    if edges.is_empty() {
        return Err(FemError::UnknownTag(tag.to_string()));
    }
    let mut b = vec![0.0; mesh.n_nodes()];
    for edge in edges {
        let (xa, ya) = mesh.coords(edge.nodes[0]);
        let (xb, yb) = mesh.coords(edge.nodes[1]);
        let len = ((xb - xa).powi(2) + (yb - ya).powi(2)).sqrt();
        for &(t, w) in GAUSS_2.iter() {
            let s = (t + 1.0) * 0.5;
            let x = xa + s * (xb - xa);
            let y = ya + s * (yb - ya);
            let coeff = g.eval(x, y) * w * len / 2.0;
            b[edge.nodes[0]] += coeff * (1.0 - s);
            b[edge.nodes[1]] += coeff * s;
        }
    }
    Ok(b)
}

/// Result of eliminating Dirichlet nodes from a system.
///
/// `matrix` is the free-by-free block, `rhs` the right-hand side with the
/// lifted values moved over, and `coupling` the free-rows-by-fixed-cols
/// block kept for reuse (it maps boundary values to interior loads).
#[derive(Debug, Clone)]
pub struct DirichletReduction {
    pub matrix: SparseMatrix,
    pub rhs: Vec<f64>,
    pub free_nodes: Vec<usize>,
    pub fixed_nodes: Vec<usize>,
    pub fixed_values: Vec<f64>,
    pub coupling: SparseMatrix,
}

impl DirichletReduction {
    /// Scatter a free-node solution back to the full node set, filling the
    /// fixed nodes with their prescribed values.
    pub fn expand(&self, x_free: &[f64]) -> Vec<f64> {
        assert_eq!(x_free.len(), self.free_nodes.len());
        let n = self.free_nodes.len() + self.fixed_nodes.len();
        let mut full = vec![0.0; n];
        for (&node, &v) in self.free_nodes.iter().zip(x_free) {
            full[node] = v;
        }
        for (&node, &v) in self.fixed_nodes.iter().zip(&self.fixed_values) {
            full[node] = v;
        }
        full
    }
}

/// Reduce `A x = b` over the free nodes, moving `fixed_values` at
/// `fixed_nodes` to the right-hand side.
pub fn eliminate_dirichlet(
    a: &SparseMatrix,
    b: &[f64],
    fixed_nodes: &[usize],
    fixed_values: &[f64],
) -> DirichletReduction {
    assert_eq!(a.n_rows(), a.n_cols());
    assert_eq!(a.n_rows(), b.len());
    assert_eq!(fixed_nodes.len(), fixed_values.len());
    let n = a.n_rows();

    let mut pairs: Vec<(usize, f64)> = fixed_nodes
        .iter()
        .copied()
        .zip(fixed_values.iter().copied())
        .collect();
    pairs.sort_unstable_by_key(|&(i, _)| i);
    debug_assert!(
        pairs.windows(2).all(|w| w[0].0 < w[1].0),
        "fixed nodes must be distinct"
    );
    let fixed: Vec<usize> = pairs.iter().map(|&(i, _)| i).collect();
    let values: Vec<f64> = pairs.iter().map(|&(_, v)| v).collect();

    let mut is_fixed = vec![false; n];
    for &i in &fixed {
        assert!(i < n, "fixed node {i} out of range");
        is_fixed[i] = true;
    }
    let free: Vec<usize> = (0..n).filter(|&i| !is_fixed[i]).collect();

    let matrix = a.submatrix(&free, &free);
    let coupling = a.submatrix(&free, &fixed);
    let mut rhs: Vec<f64> = free.iter().map(|&i| b[i]).collect();
    let lifted = coupling.matvec(&values);
    for (r, l) in rhs.iter_mut().zip(&lifted) {
        *r -= l;
    }

    DirichletReduction {
        matrix,
        rhs,
        free_nodes: free,
        fixed_nodes: fixed,
        fixed_values: values,
        coupling,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::SideTag;
    use crate::linalg::spd_solve;
    use approx::assert_relative_eq;

    fn square_mesh(nx: usize, ny: usize) -> StructuredMesh {
        StructuredMesh::rectangle(
            (0.0, 0.0),
            (1.0, 1.0),
            nx,
            ny,
            [
                SideTag::dirichlet(),
                SideTag::dirichlet(),
                SideTag::dirichlet(),
                SideTag::neumann("top"),
            ],
        )
        .unwrap()
    }

    #[test]
    fn unit_laplacian_element_matrix() {
        // classical Q1 values on the unit square: diagonal 2/3,
        // opposite corners -1/3, adjacent corners -1/6
        let m = square_mesh(1, 1);
        let k = assemble_stiffness(&m, &ScalarField::constant(1.0));
        for i in 0..4 {
            assert_relative_eq!(k.get(i, i), 2.0 / 3.0, epsilon = 1e-14);
        }
        // node ids: 0=(0,0), 1=(1,0), 2=(0,1), 3=(1,1); diagonals are (0,3), (1,2)
        assert_relative_eq!(k.get(0, 3), -1.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(k.get(1, 2), -1.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(k.get(0, 1), -1.0 / 6.0, epsilon = 1e-14);
        assert_relative_eq!(k.get(0, 2), -1.0 / 6.0, epsilon = 1e-14);
    }

    #[test]
    fn zero_coefficient_gives_zero_matrix() {
        let m = square_mesh(3, 2);
        let k = assemble_stiffness(&m, &ScalarField::constant(0.0));
        assert!(k.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stiffness_row_sums_vanish() {
        let m = square_mesh(4, 3);
        let k = assemble_stiffness(&m, &ScalarField::constant(1.0));
        let ones = vec![1.0; m.n_nodes()];
        for v in k.matvec(&ones) {
            assert!(v.abs() < 1e-13);
        }
    }

    #[test]
    fn stiffness_linear_in_coefficient() {
        let m = square_mesh(3, 3);
        let a1 = ScalarField::new("x", |x, _| x);
        let a2 = ScalarField::new("1+y", |_, y| 1.0 + y);
        let sum = ScalarField::new("x+1+y", |x, y| x + 1.0 + y);
        let k1 = assemble_stiffness(&m, &a1);
        let k2 = assemble_stiffness(&m, &a2);
        let ks = assemble_stiffness(&m, &sum);
        for ((v1, v2), vs) in k1.values().iter().zip(k2.values()).zip(ks.values()) {
            assert!((v1 + v2 - vs).abs() < 1e-13);
        }
    }

    #[test]
    fn stiffness_matches_high_order_quadrature_oracle() {
        // a(x, y) = x on a 2x1 mesh of the unit square, checked against an
        // independently coded 6x6 Gauss integration of the same integrals.
        let m = StructuredMesh::rectangle(
            (0.0, 0.0),
            (1.0, 1.0),
            2,
            1,
            [
                SideTag::dirichlet(),
                SideTag::dirichlet(),
                SideTag::dirichlet(),
                SideTag::dirichlet(),
            ],
        )
        .unwrap();
        let k = assemble_stiffness(&m, &ScalarField::new("x", |x, _| x));
        let oracle = oracle_stiffness(&m, |x, _| x);
        for i in 0..m.n_nodes() {
            for j in 0..m.n_nodes() {
                assert!(
                    (k.get(i, j) - oracle[i][j]).abs() < 1e-12,
                    "entry ({i},{j}): {} vs {}",
                    k.get(i, j),
                    oracle[i][j]
                );
            }
        }
    }

    // dense high-order quadrature oracle, written against the formulas only
    fn oracle_stiffness(m: &StructuredMesh, a: impl Fn(f64, f64) -> f64) -> Vec<Vec<f64>> {
        // 6-point Gauss-Legendre nodes/weights on [-1, 1]
        let pts = [
            (-0.932469514203152, 0.171324492379170),
            (-0.661209386466265, 0.360761573048139),
            (-0.238619186083197, 0.467913934572691),
            (0.238619186083197, 0.467913934572691),
            (0.661209386466265, 0.360761573048139),
            (0.932469514203152, 0.171324492379170),
        ];
        let n = m.n_nodes();
        let hx = m.hx();
        let hy = m.hy();
        let mut k = vec![vec![0.0; n]; n];
        for conn in m.elements() {
            let (x0, y0) = m.coords(conn[0]);
            for &(xi, wx) in &pts {
                for &(eta, wy) in &pts {
                    let x = x0 + (xi + 1.0) * 0.5 * hx;
                    let y = y0 + (eta + 1.0) * 0.5 * hy;
                    let dn = [
                        (-(1.0 - eta) / 4.0, -(1.0 - xi) / 4.0),
                        ((1.0 - eta) / 4.0, -(1.0 + xi) / 4.0),
                        ((1.0 + eta) / 4.0, (1.0 + xi) / 4.0),
                        (-(1.0 + eta) / 4.0, (1.0 - xi) / 4.0),
                    ];
                    let w = a(x, y) * wx * wy * hx * hy / 4.0;
                    for p in 0..4 {
                        for q in 0..4 {
                            let gp = (dn[p].0 * 2.0 / hx, dn[p].1 * 2.0 / hy);
                            let gq = (dn[q].0 * 2.0 / hx, dn[q].1 * 2.0 / hy);
                            k[conn[p]][conn[q]] += w * (gp.0 * gq.0 + gp.1 * gq.1);
                        }
                    }
                }
            }
        }
        k
    }

    #[test]
    fn load_of_one_sums_to_area() {
        let m = square_mesh(7, 5);
        let b = assemble_load(&m, &ScalarField::constant(1.0));
        assert_relative_eq!(b.iter().sum::<f64>(), 1.0, epsilon = 1e-13);
        let z = assemble_load(&m, &ScalarField::constant(0.0));
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn load_matches_high_order_quadrature() {
        use std::f64::consts::PI;
        let m = square_mesh(20, 20);
        let f = ScalarField::new("sin*sin", |x, y| (2.0 * PI * x).sin() * (2.0 * PI * y).sin());
        let b = assemble_load(&m, &f);
        // 6x6 Gauss oracle
        let pts = [
            (-0.932469514203152, 0.171324492379170),
            (-0.661209386466265, 0.360761573048139),
            (-0.238619186083197, 0.467913934572691),
            (0.238619186083197, 0.467913934572691),
            (0.661209386466265, 0.360761573048139),
            (0.932469514203152, 0.171324492379170),
        ];
        let mut oracle = vec![0.0; m.n_nodes()];
        let (hx, hy) = (m.hx(), m.hy());
        for conn in m.elements() {
            let (x0, y0) = m.coords(conn[0]);
            for &(xi, wx) in &pts {
                for &(eta, wy) in &pts {
                    let x = x0 + (xi + 1.0) * 0.5 * hx;
                    let y = y0 + (eta + 1.0) * 0.5 * hy;
                    let w = f.eval(x, y) * wx * wy * hx * hy / 4.0;
                    let nvals = shape(xi, eta);
                    for p in 0..4 {
                        oracle[conn[p]] += w * nvals[p];
                    }
                }
            }
        }
        for (u, v) in b.iter().zip(&oracle) {
            assert!((u - v).abs() < 1e-6);
        }
    }

    #[test]
    fn neumann_unit_flux_on_unit_edge() {
        let m = square_mesh(2, 2);
        let b = assemble_neumann(&m, &ScalarField::constant(1.0), "top").unwrap();
        assert_relative_eq!(b.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
        // top edge nodes: interior node gets 0.5, corners 0.25
        let top_mid = m.node_at_coords(0.5, 1.0, 1e-12).unwrap();
        let top_left = m.node_at_coords(0.0, 1.0, 1e-12).unwrap();
        assert_relative_eq!(b[top_mid], 0.5, epsilon = 1e-14);
        assert_relative_eq!(b[top_left], 0.25, epsilon = 1e-14);
        // zero off the tagged edge
        let center = m.node_at_coords(0.5, 0.5, 1e-12).unwrap();
        assert_eq!(b[center], 0.0);

        let z = assemble_neumann(&m, &ScalarField::constant(0.0), "top").unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn neumann_unknown_tag_is_error() {
        let m = square_mesh(2, 2);
        assert!(matches!(
            assemble_neumann(&m, &ScalarField::constant(1.0), "bogus"),
            Err(FemError::UnknownTag(_))
        ));
    }

    #[test]
    fn eliminate_none_is_identity() {
        let m = square_mesh(2, 2);
        let k = assemble_stiffness(&m, &ScalarField::constant(1.0));
        let b = assemble_load(&m, &ScalarField::constant(1.0));
        let red = eliminate_dirichlet(&k, &b, &[], &[]);
        assert_eq!(red.matrix.n_rows(), k.n_rows());
        assert_eq!(red.rhs, b);
        assert_eq!(red.free_nodes.len(), m.n_nodes());
    }

    #[test]
    fn eliminate_all_is_empty() {
        let m = square_mesh(1, 1);
        let k = assemble_stiffness(&m, &ScalarField::constant(1.0));
        let nodes: Vec<usize> = (0..4).collect();
        let red = eliminate_dirichlet(&k, &[0.0; 4], &nodes, &[1.0; 4]);
        assert_eq!(red.matrix.n_rows(), 0);
        assert!(red.rhs.is_empty());
        assert_eq!(red.expand(&[]), vec![1.0; 4]);
    }

    #[test]
    fn maximum_principle_on_tridiagonal() {
        // 1D Laplacian with both ends fixed at 1 and zero source: the
        // discrete solution is identically 1.
        let n = 7;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        let a = SparseMatrix::from_triplets(n, n, t);
        let red = eliminate_dirichlet(&a, &vec![0.0; n], &[0, n - 1], &[1.0, 1.0]);
        let x = spd_solve(&red.matrix, &red.rhs).unwrap();
        let full = red.expand(&x);
        for v in full {
            assert_relative_eq!(v, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn reduced_system_is_spd_for_positive_coefficient() {
        let m = square_mesh(5, 4);
        let a = ScalarField::new("1+x+y", |x, y| 1.0 + x + y);
        let k = assemble_stiffness(&m, &a);
        assert!(k.is_symmetric(1e-12));
        let b = vec![0.0; m.n_nodes()];
        let fixed = m.dirichlet_nodes();
        let vals = vec![0.0; fixed.len()];
        let red = eliminate_dirichlet(&k, &b, &fixed, &vals);
        // successful Cholesky is the SPD check
        assert!(crate::linalg::CholeskyFactor::new(&red.matrix).is_ok());
    }

    #[test]
    fn q1_solution_matches_dense_lu_oracle() {
        // assembled system on a 2x2 mesh solved two ways
        let m = square_mesh(2, 2);
        let k = assemble_stiffness(&m, &ScalarField::constant(1.0));
        let b = assemble_load(&m, &ScalarField::constant(1.0));
        let fixed = m.dirichlet_nodes();
        let red = eliminate_dirichlet(&k, &b, &fixed, &vec![0.0; fixed.len()]);
        let x = spd_solve(&red.matrix, &red.rhs).unwrap();
        let dense = red.matrix.to_dense();
        let x_lu = dense.lu_solve(&red.rhs).unwrap();
        for (u, v) in x.iter().zip(&x_lu) {
            assert!((u - v).abs() < 1e-10);
        }
    }
}
