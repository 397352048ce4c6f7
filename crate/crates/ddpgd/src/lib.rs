//! Overlapping-Schwarz domain decomposition accelerated by proper
//! generalized decomposition (DD-PGD) for parametric linear elliptic PDEs.
//!
//! The offline phase builds, for every subdomain, one PGD surrogate per
//! interface trace basis function plus one for the source data. The online
//! phase couples the subdomains through a substructured interface system
//! solved by matrix-free GMRES, where each operator application is a linear
//! combination of precomputed surrogate evaluations — no FEM system is
//! assembled or factorized once the surrogates exist.
//!
//! Module map:
//! - [`linalg`]: CSR matrices, banded Cholesky, CG, matrix-free GMRES.
//! - [`fem`]: structured quad meshes, Q1 assembly, boundary handling.
//! - [`separated`]: separated (PGD) tensors, evaluation, compression.
//! - [`pgd`]: greedy rank-one PGD solver for parametric elliptic problems.
//! - [`offline`]: subdomain surrogate construction and persistence.
//! - [`online`]: interface system assembly, GMRES coupling, reconstruction.
//! - [`reference`]: full-order and classical-Schwarz oracles, error norms.
//! - [`experiments`], [`config`], [`expr`]: experiment definitions and the
//!   configuration front end shared with the CLI.

pub mod config;
pub mod counters;
pub mod experiments;
pub mod expr;
pub mod fem;
pub mod linalg;
pub mod offline;
pub mod online;
pub mod pgd;
pub mod reference;
pub mod separated;
