//! Experiment definitions: geometry, parametric axes, data in separated
//! form, and the built-in experiments driven by the CLI and the acceptance
//! suite.
//!
//! An [`ExperimentConfig`] is the single source of truth for one problem:
//! it produces the overlapping subdomains with tagged boundaries, the
//! per-subdomain separated data (restricted to the parameter axes that are
//! actually active there), and the matching full-order [`GlobalProblem`]
//! for the reference oracles.

use crate::fem::{assemble_load, assemble_stiffness, ScalarField, Side, SideTag, StructuredMesh};
use crate::offline::{SubdomainData, Subdomain};
use crate::pgd::{DataTerm, NeumannTerm};
use crate::reference::{GlobalProblem, ParamField};
use crate::separated::{ParamAxis, ParamGrid, SeparatedError};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid field `{field}`: {message}")]
    Field { field: String, message: String },
    #[error(transparent)]
    Grid(#[from] SeparatedError),
    #[error(transparent)]
    Fem(#[from] crate::fem::FemError),
}

fn field_err(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field: field.into(),
        message: message.into(),
    }
}

/// Scalar function of one parameter value.
#[derive(Clone)]
pub struct ParamScalar(Arc<dyn Fn(f64) -> f64 + Send + Sync>);

impl ParamScalar {
    pub fn new(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self(Arc::new(f))
    }

    pub fn identity() -> Self {
        Self::new(|v| v)
    }

    pub fn eval(&self, v: f64) -> f64 {
        (self.0)(v)
    }
}

impl std::fmt::Debug for ParamScalar {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ParamScalar")
    }
}

/// One separable data term. `factors` lists only the axes the term depends
/// on; all other axes contribute the constant 1.
#[derive(Debug, Clone)]
pub struct ExperimentTerm {
    pub spatial: ScalarField,
    pub factors: Vec<(String, ParamScalar)>,
}

impl ExperimentTerm {
    pub fn constant_in_mu(spatial: ScalarField) -> Self {
        Self {
            spatial,
            factors: Vec::new(),
        }
    }

    fn factor_value(&self, axis: &str, v: f64) -> f64 {
        self.factors
            .iter()
            .find(|(n, _)| n == axis)
            .map(|(_, f)| f.eval(v))
            .unwrap_or(1.0)
    }

    /// Evaluate the full term at a parameter assignment in axis order.
    fn eval(&self, x: f64, y: f64, axes: &[AxisSpec], mu: &[f64]) -> f64 {
        let mut v = self.spatial.eval(x, y);
        for ((_, f), value) in self
            .factors
            .iter()
            .filter_map(|(n, f)| axes.iter().position(|a| &a.name == n).map(|i| ((n, f), mu[i])))
        {
            v *= f.eval(value);
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AxisSpec {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub step: f64,
}

/// One subdomain of the overlapping chain; the y-extent is always the full
/// domain height.
#[derive(Debug, Clone, PartialEq)]
pub struct SubdomainSpec {
    pub id: String,
    pub x_range: (f64, f64),
}

/// Exterior boundary condition kind per global side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SideBc {
    Dirichlet,
    Neumann,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub enrich: f64,
    pub compress: f64,
    pub gmres: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            enrich: 1e-4,
            compress: 1e-3,
            gmres: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub name: String,
    pub origin: (f64, f64),
    pub extent: (f64, f64),
    pub h: f64,
    pub subdomains: Vec<SubdomainSpec>,
    pub axes: Vec<AxisSpec>,
    pub diffusion: Vec<ExperimentTerm>,
    pub source: Vec<ExperimentTerm>,
    /// Neumann data attached to global sides (sides without data stay
    /// natural).
    pub neumann: Vec<(Side, ExperimentTerm)>,
    /// Boundary kind per side, in (left, right, bottom, top) order.
    pub bc: [SideBc; 4],
    pub exact: Option<ParamField>,
    pub tolerances: Tolerances,
    pub seed: u64,
}

fn side_index(side: Side) -> usize {
    match side {
        Side::Left => 0,
        Side::Right => 1,
        Side::Bottom => 2,
        Side::Top => 3,
    }
}

fn side_name(side: Side) -> &'static str {
    match side {
        Side::Left => "left",
        Side::Right => "right",
        Side::Bottom => "bottom",
        Side::Top => "top",
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.h <= 0.0 {
            return Err(field_err("h", "mesh size must be positive"));
        }
        if self.extent.0 <= 0.0 || self.extent.1 <= 0.0 {
            return Err(field_err("domain.extent", "extent must be positive"));
        }
        let lattice = |v: f64, what: &str| -> Result<(), ConfigError> {
            let steps = (v - self.origin.0) / self.h;
            if (steps - steps.round()).abs() > 1e-9 * steps.abs().max(1.0) {
                return Err(field_err(what, format!("{v} is not a multiple of h={} from the origin", self.h)));
            }
            Ok(())
        };
        if self.subdomains.is_empty() {
            return Err(field_err("subdomains", "at least one subdomain required"));
        }
        for (i, sd) in self.subdomains.iter().enumerate() {
            let (x0, x1) = sd.x_range;
            if x1 <= x0 {
                return Err(field_err(&format!("subdomains[{i}].x_range"), "empty range"));
            }
            lattice(x0, &format!("subdomains[{i}].x_range.0"))?;
            lattice(x1, &format!("subdomains[{i}].x_range.1"))?;
        }
        let first = self.subdomains.first().expect("nonempty");
        let last = self.subdomains.last().expect("nonempty");
        if (first.x_range.0 - self.origin.0).abs() > 1e-12 {
            return Err(field_err("subdomains", "first subdomain must start at the domain boundary"));
        }
        if (last.x_range.1 - (self.origin.0 + self.extent.0)).abs() > 1e-12 {
            return Err(field_err("subdomains", "last subdomain must end at the domain boundary"));
        }
        for (i, pair) in self.subdomains.windows(2).enumerate() {
            let (a, b) = (&pair[0], &pair[1]);
            if b.x_range.0 <= a.x_range.0 || b.x_range.1 <= a.x_range.1 {
                return Err(field_err(
                    &format!("subdomains[{}]", i + 1),
                    "subdomains must advance along x",
                ));
            }
            let overlap = a.x_range.1 - b.x_range.0;
            if overlap <= 0.0 {
                return Err(field_err(
                    &format!("subdomains[{}]", i + 1),
                    format!("overlap with the previous subdomain is {overlap}, must be positive"),
                ));
            }
        }
        if self.axes.is_empty() {
            return Err(field_err("axes", "at least one parametric axis required"));
        }
        for a in &self.axes {
            if !(a.upper > a.lower) {
                return Err(field_err(&format!("axis.{}", a.name), "degenerate interval"));
            }
            if !(a.step > 0.0) {
                return Err(field_err(&format!("axis.{}", a.name), "step must be positive"));
            }
        }
        if self.diffusion.is_empty() {
            return Err(field_err("diffusion", "at least one diffusion term required"));
        }
        let t = &self.tolerances;
        if !(t.enrich > 0.0 && t.compress > 0.0 && t.gmres > 0.0) {
            return Err(field_err("tolerances", "all tolerances must be positive"));
        }
        for (side, _) in &self.neumann {
            if self.bc[side_index(*side)] != SideBc::Neumann {
                return Err(field_err(
                    &format!("neumann.{}", side_name(*side)),
                    "flux data attached to a non-Neumann side",
                ));
            }
        }
        Ok(())
    }

    /// The full parametric grid over all axes.
    pub fn param_grid(&self) -> Result<ParamGrid, ConfigError> {
        let axes: Result<Vec<ParamAxis>, SeparatedError> = self
            .axes
            .iter()
            .map(|a| ParamAxis::new(a.name.clone(), a.lower, a.upper, a.step))
            .collect();
        Ok(ParamGrid::new(axes?)?)
    }

    /// Grid restricted to the named axes (order follows `self.axes`).
    fn sub_grid(&self, names: &[String]) -> Result<ParamGrid, ConfigError> {
        let axes: Result<Vec<ParamAxis>, SeparatedError> = self
            .axes
            .iter()
            .filter(|a| names.contains(&a.name))
            .map(|a| ParamAxis::new(a.name.clone(), a.lower, a.upper, a.step))
            .collect();
        Ok(ParamGrid::new(axes?)?)
    }

    fn side_tag(&self, side: Side, neighbor: Option<&str>) -> SideTag {
        match neighbor {
            Some(id) => SideTag::interface(id),
            None => match self.bc[side_index(side)] {
                SideBc::Dirichlet => SideTag::dirichlet(),
                SideBc::Neumann => SideTag::neumann(side_name(side)),
            },
        }
    }

    /// Build the overlapping subdomains with tagged boundaries. Interface
    /// labels carry the neighbor's id.
    pub fn build_subdomains(&self) -> Result<Vec<Subdomain>, ConfigError> {
        self.validate()?;
        let ny = (self.extent.1 / self.h).round() as usize;
        let mut out = Vec::with_capacity(self.subdomains.len());
        for (i, spec) in self.subdomains.iter().enumerate() {
            let (x0, x1) = spec.x_range;
            let nx = ((x1 - x0) / self.h).round() as usize;
            let left_neighbor = (i > 0).then(|| self.subdomains[i - 1].id.as_str());
            let right_neighbor =
                (i + 1 < self.subdomains.len()).then(|| self.subdomains[i + 1].id.as_str());
            let mesh = StructuredMesh::rectangle(
                (x0, self.origin.1),
                (x1 - x0, self.extent.1),
                nx.max(1),
                ny.max(1),
                [
                    self.side_tag(Side::Left, left_neighbor),
                    self.side_tag(Side::Right, right_neighbor),
                    self.side_tag(Side::Bottom, None),
                    self.side_tag(Side::Top, None),
                ],
            )?;
            out.push(Subdomain::from_mesh(spec.id.clone(), mesh));
        }
        Ok(out)
    }

    /// Separated data for one subdomain, restricted to its active axes:
    /// terms whose spatial factor vanishes identically on the subdomain
    /// mesh are dropped, and only axes referenced by surviving terms keep a
    /// grid dimension.
    pub fn subdomain_problem(
        &self,
        sd: &Subdomain,
        index: usize,
    ) -> Result<(ParamGrid, SubdomainData), ConfigError> {
        let keep_stiffness = |term: &ExperimentTerm| -> bool {
            let k = assemble_stiffness(&sd.mesh, &term.spatial);
            k.values().iter().any(|&v| v != 0.0)
        };
        let keep_load = |term: &ExperimentTerm| -> bool {
            let b = assemble_load(&sd.mesh, &term.spatial);
            b.iter().any(|&v| v != 0.0)
        };

        let diffusion: Vec<&ExperimentTerm> = self.diffusion.iter().filter(|t| keep_stiffness(t)).collect();
        let source: Vec<&ExperimentTerm> = self.source.iter().filter(|t| keep_load(t)).collect();
        let neumann: Vec<(&str, &ExperimentTerm)> = self
            .neumann
            .iter()
            .filter_map(|(side, term)| {
                let carries = match side {
                    Side::Left => index == 0,
                    Side::Right => index + 1 == self.subdomains.len(),
                    Side::Bottom | Side::Top => true,
                };
                carries.then_some((side_name(*side), term))
            })
            .collect();

        let mut active: Vec<String> = Vec::new();
        for term in diffusion
            .iter()
            .copied()
            .chain(source.iter().copied())
            .chain(neumann.iter().map(|&(_, t)| t))
        {
            for (name, _) in &term.factors {
                if !active.contains(name) {
                    active.push(name.clone());
                }
            }
        }
        // a model needs at least one axis; fall back to the first
        if active.is_empty() {
            active.push(self.axes[0].name.clone());
        }
        let grid = self.sub_grid(&active)?;

        let to_data_term = |term: &ExperimentTerm| -> DataTerm {
            let parametric: Vec<Vec<f64>> = grid
                .axes()
                .iter()
                .map(|a| a.points().iter().map(|&v| term.factor_value(&a.name, v)).collect())
                .collect();
            DataTerm {
                spatial: term.spatial.clone(),
                parametric,
            }
        };

        let data = SubdomainData {
            diffusion: diffusion.iter().map(|t| to_data_term(t)).collect(),
            source: source.iter().map(|t| to_data_term(t)).collect(),
            neumann: neumann
                .iter()
                .map(|&(tag, t)| {
                    let dt = to_data_term(t);
                    NeumannTerm {
                        tag: tag.to_string(),
                        spatial: dt.spatial,
                        parametric: dt.parametric,
                    }
                })
                .collect(),
        };
        Ok((grid, data))
    }

    /// Full-order problem on the global mesh, for the reference oracles.
    pub fn global_problem(&self) -> Result<GlobalProblem, ConfigError> {
        self.validate()?;
        let nx = (self.extent.0 / self.h).round() as usize;
        let ny = (self.extent.1 / self.h).round() as usize;
        let mesh = StructuredMesh::rectangle(
            self.origin,
            self.extent,
            nx.max(1),
            ny.max(1),
            [
                self.side_tag(Side::Left, None),
                self.side_tag(Side::Right, None),
                self.side_tag(Side::Bottom, None),
                self.side_tag(Side::Top, None),
            ],
        )?;
        Ok(GlobalProblem {
            mesh,
            diffusion: self.sum_field(&self.diffusion),
            source: self.sum_field(&self.source),
            neumann: self
                .neumann
                .iter()
                .map(|(side, term)| {
                    (
                        side_name(*side).to_string(),
                        self.sum_field(std::slice::from_ref(term)),
                    )
                })
                .collect(),
            exact: self.exact.clone(),
        })
    }

    /// Closure summing a term list at full parameter tuples (axis order).
    pub fn sum_field(&self, terms: &[ExperimentTerm]) -> ParamField {
        let terms = terms.to_vec();
        let axes = self.axes.clone();
        ParamField::new(move |x, y, mu| terms.iter().map(|t| t.eval(x, y, &axes, mu)).sum())
    }

    /// Parameter assignment (name, value) from a tuple in axis order.
    pub fn mu_assignment(&self, mu: &[f64]) -> Result<Vec<(String, f64)>, ConfigError> {
        if mu.len() != self.axes.len() {
            return Err(field_err(
                "mu",
                format!("{} values for {} axes", mu.len(), self.axes.len()),
            ));
        }
        Ok(self
            .axes
            .iter()
            .zip(mu)
            .map(|(a, &v)| (a.name.clone(), v))
            .collect())
    }
}

/// The bidomain diffusion test: `nu = 1 + mu x` on `(0,2) x (0,1)` with a
/// manufactured solution, split into two overlapping subdomains.
pub fn bidomain() -> ExperimentConfig {
    use std::f64::consts::PI;
    let sin2 = |x: f64, y: f64| (2.0 * PI * x).sin() * (2.0 * PI * y).sin();
    // source terms of -div((1 + mu x) grad u) for the manufactured
    // u = sin(2 pi x) sin(2 pi y) + (mu / 2) x y (y - 1) (x - 2),
    // collected by powers of mu (verified by finite differences in tests)
    let s0 = ScalarField::new("8 pi^2 sin sin", move |x, y| 8.0 * PI * PI * sin2(x, y));
    let s1 = ScalarField::new("mu coefficient", move |x, y| {
        8.0 * PI * PI * x * sin2(x, y) - (y * y - y) - (x * x - 2.0 * x)
            - 2.0 * PI * (2.0 * PI * x).cos() * (2.0 * PI * y).sin()
    });
    let s2 = ScalarField::new("mu^2 coefficient", |x, y| {
        -x * (y * y - y) - x * (x * x - 2.0 * x) - (x - 1.0) * (y * y - y)
    });

    ExperimentConfig {
        name: "bidomain".into(),
        origin: (0.0, 0.0),
        extent: (2.0, 1.0),
        h: 0.05,
        subdomains: vec![
            SubdomainSpec {
                id: "omega1".into(),
                x_range: (0.0, 1.05),
            },
            SubdomainSpec {
                id: "omega2".into(),
                x_range: (0.95, 2.0),
            },
        ],
        axes: vec![AxisSpec {
            name: "mu".into(),
            lower: 1.0,
            upper: 50.0,
            step: 1e-3,
        }],
        diffusion: vec![
            ExperimentTerm::constant_in_mu(ScalarField::constant(1.0)),
            ExperimentTerm {
                spatial: ScalarField::new("x", |x, _| x),
                factors: vec![("mu".into(), ParamScalar::identity())],
            },
        ],
        source: vec![
            ExperimentTerm::constant_in_mu(s0),
            ExperimentTerm {
                spatial: s1,
                factors: vec![("mu".into(), ParamScalar::identity())],
            },
            ExperimentTerm {
                spatial: s2,
                factors: vec![("mu".into(), ParamScalar::new(|m| m * m))],
            },
        ],
        neumann: Vec::new(),
        bc: [SideBc::Dirichlet; 4],
        exact: Some(ParamField::new(move |x, y, mu| {
            sin2(x, y) + mu[0] / 2.0 * x * y * (y - 1.0) * (x - 2.0)
        })),
        tolerances: Tolerances::default(),
        seed: 2024,
    }
}

/// A 1 x 9 overlapping chain of unit blocks with per-block parametric
/// diffusion, a unit Neumann inflow on the left edge and a homogeneous
/// Dirichlet outlet on the right edge.
pub fn chain9() -> ExperimentConfig {
    let n_blocks = 9usize;
    let h = 0.05;
    let delta = h; // half the overlap width

    let mut subdomains = Vec::with_capacity(n_blocks);
    for b in 1..=n_blocks {
        let x0 = if b == 1 { 0.0 } else { (b - 1) as f64 - delta };
        let x1 = if b == n_blocks { n_blocks as f64 } else { b as f64 + delta };
        subdomains.push(SubdomainSpec {
            id: format!("omega{b}"),
            x_range: (x0, x1),
        });
    }

    let diffusion = (1..=n_blocks)
        .map(|b| {
            let lo = (b - 1) as f64;
            let hi = b as f64;
            let closing = b == n_blocks;
            ExperimentTerm {
                spatial: ScalarField::new(format!("block {b} indicator"), move |x, _| {
                    if x >= lo && (x < hi || (closing && x <= hi)) {
                        1.0
                    } else {
                        0.0
                    }
                }),
                factors: vec![(format!("mu{b}"), ParamScalar::identity())],
            }
        })
        .collect();

    ExperimentConfig {
        name: "chain9".into(),
        origin: (0.0, 0.0),
        extent: (n_blocks as f64, 1.0),
        h,
        subdomains,
        axes: (1..=n_blocks)
            .map(|b| AxisSpec {
                name: format!("mu{b}"),
                lower: 5e-2,
                upper: 10.0,
                step: 1e-3,
            })
            .collect(),
        diffusion,
        source: Vec::new(),
        neumann: vec![(
            Side::Left,
            ExperimentTerm::constant_in_mu(ScalarField::constant(1.0)),
        )],
        bc: [SideBc::Neumann, SideBc::Dirichlet, SideBc::Neumann, SideBc::Neumann],
        exact: None,
        tolerances: Tolerances::default(),
        seed: 2024,
    }
}

/// Look up a built-in experiment by name.
pub fn builtin(name: &str) -> Option<ExperimentConfig> {
    match name {
        "bidomain" => Some(bidomain()),
        "chain9" => Some(chain9()),
        _ => None,
    }
}
