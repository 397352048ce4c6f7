//! TOML configuration front end for custom experiments.
//!
//! Data terms are written as expressions over `x`, `y` and the parameter
//! names (see [`crate::expr`]); the parametric part of a term is a table
//! mapping axis names to single-variable expressions, which keeps every
//! term separable by construction.

use crate::experiments::{
    AxisSpec, ConfigError, ExperimentConfig, ExperimentTerm, ParamScalar, SideBc, SubdomainSpec,
    Tolerances,
};
use crate::expr::Expr;
use crate::fem::{ScalarField, Side};
use crate::reference::ParamField;
use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    name: String,
    #[serde(default)]
    seed: Option<u64>,
    domain: DomainSection,
    #[serde(rename = "subdomain")]
    subdomains: Vec<SubdomainSection>,
    #[serde(rename = "axis")]
    axes: Vec<AxisSection>,
    bc: BcSection,
    #[serde(default)]
    diffusion: Vec<TermSection>,
    #[serde(default)]
    source: Vec<TermSection>,
    #[serde(default)]
    exact: Option<ExactSection>,
    #[serde(default)]
    tolerances: Option<TolerancesSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DomainSection {
    origin: [f64; 2],
    extent: [f64; 2],
    h: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SubdomainSection {
    id: String,
    x_range: [f64; 2],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AxisSection {
    name: String,
    range: [f64; 2],
    step: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BcSection {
    left: BcValue,
    right: BcValue,
    bottom: BcValue,
    top: BcValue,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum BcValue {
    Kind(String),
    Neumann { neumann: String },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TermSection {
    spatial: String,
    #[serde(default)]
    parametric: BTreeMap<String, String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExactSection {
    expression: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TolerancesSection {
    #[serde(default)]
    enrich: Option<f64>,
    #[serde(default)]
    compress: Option<f64>,
    #[serde(default)]
    gmres: Option<f64>,
}

fn field_err(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field: field.into(),
        message: message.into(),
    }
}

fn parse_spatial(field: &str, src: &str) -> Result<ScalarField, ConfigError> {
    let expr = Expr::parse(src).map_err(|e| field_err(field, e.to_string()))?;
    for v in expr.variables() {
        if v != "x" && v != "y" {
            return Err(field_err(
                field,
                format!("spatial expression may only use x and y, found `{v}`"),
            ));
        }
    }
    let desc = src.to_string();
    Ok(ScalarField::new(desc, move |x, y| {
        expr.eval(&[("x", x), ("y", y)]).expect("variables checked")
    }))
}

fn parse_term(
    field: &str,
    section: &TermSection,
    axes: &[AxisSpec],
) -> Result<ExperimentTerm, ConfigError> {
    let spatial = parse_spatial(&format!("{field}.spatial"), &section.spatial)?;
    let mut factors = Vec::new();
    for (axis, src) in &section.parametric {
        if !axes.iter().any(|a| &a.name == axis) {
            return Err(field_err(
                &format!("{field}.parametric"),
                format!("unknown axis `{axis}`"),
            ));
        }
        let expr = Expr::parse(src)
            .map_err(|e| field_err(&format!("{field}.parametric.{axis}"), e.to_string()))?;
        for v in expr.variables() {
            if &v != axis {
                return Err(field_err(
                    &format!("{field}.parametric.{axis}"),
                    format!("factor for axis `{axis}` may only use `{axis}`, found `{v}`"),
                ));
            }
        }
        let axis_name = axis.clone();
        factors.push((
            axis.clone(),
            ParamScalar::new(move |v| {
                expr.eval(&[(axis_name.as_str(), v)]).expect("variables checked")
            }),
        ));
    }
    Ok(ExperimentTerm { spatial, factors })
}

fn parse_bc(
    side: Side,
    value: &BcValue,
    axes: &[AxisSpec],
) -> Result<(SideBc, Option<(Side, ExperimentTerm)>), ConfigError> {
    let side_name = match side {
        Side::Left => "left",
        Side::Right => "right",
        Side::Bottom => "bottom",
        Side::Top => "top",
    };
    match value {
        BcValue::Kind(kind) => match kind.as_str() {
            "dirichlet" => Ok((SideBc::Dirichlet, None)),
            "neumann" => Ok((SideBc::Neumann, None)),
            other => Err(field_err(
                &format!("bc.{side_name}"),
                format!("expected `dirichlet` or `neumann`, got `{other}`"),
            )),
        },
        BcValue::Neumann { neumann } => {
            let section = TermSection {
                spatial: neumann.clone(),
                parametric: BTreeMap::new(),
            };
            let term = parse_term(&format!("bc.{side_name}"), &section, axes)?;
            Ok((SideBc::Neumann, Some((side, term))))
        }
    }
}

/// Parse a configuration document into an [`ExperimentConfig`].
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let file: ConfigFile =
        toml::from_str(text).map_err(|e| field_err("<document>", e.to_string()))?;

    let axes: Vec<AxisSpec> = file
        .axes
        .iter()
        .map(|a| AxisSpec {
            name: a.name.clone(),
            lower: a.range[0],
            upper: a.range[1],
            step: a.step,
        })
        .collect();

    let mut bc = [SideBc::Dirichlet; 4];
    let mut neumann = Vec::new();
    for (i, (side, value)) in [
        (Side::Left, &file.bc.left),
        (Side::Right, &file.bc.right),
        (Side::Bottom, &file.bc.bottom),
        (Side::Top, &file.bc.top),
    ]
    .into_iter()
    .enumerate()
    {
        let (kind, data) = parse_bc(side, value, &axes)?;
        bc[i] = kind;
        if let Some(pair) = data {
            neumann.push(pair);
        }
    }

    let diffusion: Result<Vec<ExperimentTerm>, ConfigError> = file
        .diffusion
        .iter()
        .enumerate()
        .map(|(i, t)| parse_term(&format!("diffusion[{i}]"), t, &axes))
        .collect();
    let source: Result<Vec<ExperimentTerm>, ConfigError> = file
        .source
        .iter()
        .enumerate()
        .map(|(i, t)| parse_term(&format!("source[{i}]"), t, &axes))
        .collect();

    let exact = match &file.exact {
        None => None,
        Some(section) => {
            let expr = Expr::parse(&section.expression)
                .map_err(|e| field_err("exact.expression", e.to_string()))?;
            for v in expr.variables() {
                if v != "x" && v != "y" && !axes.iter().any(|a| a.name == v) {
                    return Err(field_err(
                        "exact.expression",
                        format!("unknown variable `{v}`"),
                    ));
                }
            }
            let axis_names: Vec<String> = axes.iter().map(|a| a.name.clone()).collect();
            Some(ParamField::new(move |x, y, mu| {
                let mut vars: Vec<(&str, f64)> = vec![("x", x), ("y", y)];
                for (name, &value) in axis_names.iter().zip(mu) {
                    vars.push((name.as_str(), value));
                }
                expr.eval(&vars).expect("variables checked")
            }))
        }
    };

    let mut tolerances = Tolerances::default();
    if let Some(t) = &file.tolerances {
        if let Some(v) = t.enrich {
            tolerances.enrich = v;
        }
        if let Some(v) = t.compress {
            tolerances.compress = v;
        }
        if let Some(v) = t.gmres {
            tolerances.gmres = v;
        }
    }

    let cfg = ExperimentConfig {
        name: file.name,
        origin: (file.domain.origin[0], file.domain.origin[1]),
        extent: (file.domain.extent[0], file.domain.extent[1]),
        h: file.domain.h,
        subdomains: file
            .subdomains
            .iter()
            .map(|s| SubdomainSpec {
                id: s.id.clone(),
                x_range: (s.x_range[0], s.x_range[1]),
            })
            .collect(),
        axes,
        diffusion: diffusion?,
        source: source?,
        neumann,
        bc,
        exact,
        tolerances,
        seed: file.seed.unwrap_or(0),
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Load a configuration: either `builtin:<name>` (or a bare builtin name)
/// or a TOML file path.
pub fn load_config(spec: &str) -> Result<ExperimentConfig, ConfigError> {
    if let Some(name) = spec.strip_prefix("builtin:") {
        return crate::experiments::builtin(name)
            .ok_or_else(|| field_err("config", format!("unknown builtin experiment `{name}`")));
    }
    let path = Path::new(spec);
    if !path.exists() {
        if let Some(cfg) = crate::experiments::builtin(spec) {
            return Ok(cfg);
        }
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| field_err("config", format!("cannot read `{spec}`: {e}")))?;
    parse_config(&text)
}
