//! Quick end-to-end run of the bidomain experiment at paper resolution.
//!
//! Prints offline mode counts, online iteration counts and the relative L2
//! errors against the exact solution for mu = 3 and mu = 30.

use ddpgd::experiments::bidomain;
use ddpgd::linalg::GmresConfig;
use ddpgd::offline::build_surrogate;
use ddpgd::online::SchwarzProblem;
use ddpgd::pgd::PgdConfig;
use ddpgd::reference::{full_order_solve, rel_l2_error};
use std::time::Instant;

fn main() {
    let cfg = bidomain();
    let subdomains = cfg.build_subdomains().unwrap();

    let enrich: f64 = std::env::var("ENRICH").map(|v| v.parse().unwrap()).unwrap_or(cfg.tolerances.enrich);
    let compress: f64 = std::env::var("COMPRESS").map(|v| v.parse().unwrap()).unwrap_or(cfg.tolerances.compress);
    let fp_tol: f64 = std::env::var("FPTOL").map(|v| v.parse().unwrap()).unwrap_or(1e-3);
    println!("enrich={enrich:.1e} compress={compress:.1e} fp_tol={fp_tol:.1e}");

    let t0 = Instant::now();
    let mut models = Vec::new();
    for (i, sd) in subdomains.iter().enumerate() {
        let t = Instant::now();
        let (grid, data) = cfg.subdomain_problem(sd, i).unwrap();
        let pgd_cfg = PgdConfig {
            enrich_tol: enrich,
            max_modes: 60,
            fp_tol,
            fp_max_iters: 25,
            seed: cfg.seed,
        };
        let model = build_surrogate(sd, &grid, &data, &pgd_cfg, compress).unwrap();
        let before: usize = model.metadata.modes_before.iter().sum();
        let after: usize = model.metadata.modes_after.iter().sum();
        println!(
            "{}: {} problems, modes {} -> {} ({:.2}s)",
            sd.id,
            model.metadata.modes_before.len(),
            before,
            after,
            t.elapsed().as_secs_f64()
        );
        models.push(model);
    }
    println!("offline total: {:.2}s", t0.elapsed().as_secs_f64());

    let gp = cfg.global_problem().unwrap();
    let exact = gp.exact.clone().unwrap();

    for mu in [3.0, 30.0] {
        let t1 = Instant::now();
        let assignment = cfg.mu_assignment(&[mu]).unwrap();
        let sp = SchwarzProblem::new(
            models.clone(),
            &assignment,
            GmresConfig {
                rel_tol: cfg.tolerances.gmres,
                max_iters: 200,
                restart: None,
            },
        )
        .unwrap();
        let sol = sp.solve_interface().unwrap();
        let field = sp.reconstruct_global(&sol.lambda).unwrap();
        let online_time = t1.elapsed().as_secs_f64();

        let err_pgd = rel_l2_error(&field.values, |x, y| exact.eval(x, y, &[mu]), &field.mesh);

        let u_fem = full_order_solve(&gp, &[mu]).unwrap();
        let err_fem = rel_l2_error(&u_fem, |x, y| exact.eval(x, y, &[mu]), &gp.mesh);

        println!(
            "mu={mu}: gmres {} iters, err_pgd {:.4e}, err_fem {:.4e}, overlap mismatch {:.2e}, online {:.3}s",
            sol.iters, err_pgd, err_fem, field.overlap_mismatch_linf, online_time
        );

        // compare the converged interface coefficients with the classical
        // alternating Schwarz traces (direct solves)
        let run = ddpgd::reference::alternating_schwarz(
            &subdomains,
            &cfg.sum_field(&cfg.diffusion),
            &cfg.sum_field(&cfg.source),
            &[],
            &[mu],
            1e-8,
            5000,
            None,
        )
        .unwrap();
        let mut worst = 0.0f64;
        let mut offset = 0;
        for traces in &run.traces {
            for (pos, t) in traces.iter().enumerate() {
                worst = worst.max((sol.lambda[offset + pos] - t).abs());
            }
            offset += traces.len();
        }
        println!(
            "mu={mu}: schwarz {} sweeps, |lambda - trace|_inf = {:.3e}",
            run.iters, worst
        );
    }
}
