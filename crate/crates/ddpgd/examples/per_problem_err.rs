//! Per-subproblem surrogate accuracy at one parameter value: compares each
//! offline tensor of Omega_1 against a direct FEM solve of its problem.

use ddpgd::experiments::bidomain;
use ddpgd::fem::{assemble_load, assemble_stiffness, eliminate_dirichlet, ScalarField};
use ddpgd::linalg::{norm2, spd_solve};
use ddpgd::offline::build_surrogate;
use ddpgd::pgd::PgdConfig;

fn main() {
    let cfg = bidomain();
    let subdomains = cfg.build_subdomains().unwrap();
    let sd = &subdomains[0];
    let (grid, data) = cfg.subdomain_problem(sd, 0).unwrap();
    let enrich: f64 = std::env::var("ENRICH").map(|v| v.parse().unwrap()).unwrap_or(1e-4);
    let compress: f64 = std::env::var("COMPRESS").map(|v| v.parse().unwrap()).unwrap_or(1e-3);
    let pgd_cfg = PgdConfig {
        enrich_tol: enrich,
        max_modes: 60,
        fp_tol: 1e-3,
        fp_max_iters: 25,
        seed: cfg.seed,
    };
    let model = build_surrogate(sd, &grid, &data, &pgd_cfg, compress).unwrap();

    let mu = 3.0;
    let nu = ScalarField::new("nu", move |x, _| 1.0 + mu * x);
    let k = assemble_stiffness(&sd.mesh, &nu);
    let lambda_nodes = sd.lambda_nodes();

    // u0 problem
    let mut b = vec![0.0; sd.mesh.n_nodes()];
    for term in &data.source {
        let full = assemble_load(&sd.mesh, &term.spatial);
        let factor: f64 = term
            .parametric
            .iter()
            .zip(grid.axes())
            .map(|(f, a)| {
                let idx = a.points().iter().position(|&p| (p - mu).abs() < 1e-12).unwrap();
                f[idx]
            })
            .product();
        for (bi, fi) in b.iter_mut().zip(&full) {
            *bi += factor * fi;
        }
    }
    let mut fixed: Vec<usize> = sd.exterior_dirichlet_nodes.clone();
    fixed.extend(lambda_nodes.iter().copied());
    fixed.sort_unstable();

    let red = eliminate_dirichlet(&k, &b, &fixed, &vec![0.0; fixed.len()]);
    let x = spd_solve(&red.matrix, &red.rhs).unwrap();
    let fem = red.expand(&x);
    let approx = model.u0.evaluate(&[mu]).unwrap();
    let diff: Vec<f64> = approx.iter().zip(&fem).map(|(a, b)| a - b).collect();
    println!(
        "u0: rank {:>2}, abs err {:.3e}, field scale {:.3e}",
        model.u0.rank(),
        ddpgd::linalg::norm_inf(&diff),
        ddpgd::linalg::norm_inf(&fem)
    );

    let mut worst = (0usize, 0.0f64);
    for (q, uq) in model.uq.iter().enumerate() {
        let zeros = vec![0.0; sd.mesh.n_nodes()];
        let values: Vec<f64> = fixed
            .iter()
            .map(|&n| if n == lambda_nodes[q] { 1.0 } else { 0.0 })
            .collect();
        let red = eliminate_dirichlet(&k, &zeros, &fixed, &values);
        let x = spd_solve(&red.matrix, &red.rhs).unwrap();
        let fem = red.expand(&x);
        let approx = uq.evaluate(&[mu]).unwrap();
        let diff: Vec<f64> = approx.iter().zip(&fem).map(|(a, b)| a - b).collect();
        let e = ddpgd::linalg::norm_inf(&diff);
        if e > worst.1 {
            worst = (q, e);
        }
        if q < 3 || e > 1e-4 {
            println!(
                "uq[{q:>2}]: rank {:>2}, abs err {:.3e} (fem scale {:.3e}, norm2 {:.3e})",
                uq.rank(),
                e,
                ddpgd::linalg::norm_inf(&fem),
                norm2(&fem)
            );
        }
    }
    println!("worst uq: q={} err {:.3e}", worst.0, worst.1);
}
