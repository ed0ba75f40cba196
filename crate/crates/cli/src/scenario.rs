//! Declarative JSON scenarios: systems, candidate processes, costs, targets
//! and experiment settings.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use nsgoh_core::asymptotic::{ExpansionConfig, MainpropConfig};
use nsgoh_core::conditions::{CheckConfig, Problem, TargetSet};
use nsgoh_core::error::CoreError;
use nsgoh_core::geometry::{PiecewiseField, Regularity, SamplingConfig};
use nsgoh_core::system::{Channel, Control, ControlAffineSystem, ControlBox, ControlPiece, Process, SelectionPolicy};
use nsgoh_core::variation::{VariationGenerator, VariationKind};
use nsgoh_expr::{parse_condition, parse_expr, Expr};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("parse error at {line}:{column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("malformed expression in {path} at column {column}: {message}")]
    Expression { path: String, column: usize, message: String },
    #[error("unsupported expression in {path}: {message}")]
    UnsupportedExpression { path: String, message: String },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

pub type Result<T> = std::result::Result<T, ScenarioError>;

/// One region of a piecewise field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PieceSpec {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub when: Vec<String>,
    pub value: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldSpec {
    /// One formula per component.
    Smooth(Vec<String>),
    Piecewise {
        pieces: Vec<PieceSpec>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        regularity: Option<Regularity>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    /// `null` entries stand for unbounded sides.
    pub lower: Vec<Option<f64>>,
    pub upper: Vec<Option<f64>>,
}

/// Control on [start, end], one formula in `t` per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlPieceSpec {
    pub start: f64,
    pub end: f64,
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckSpec {
    #[serde(default = "default_grid")]
    pub grid_points: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_policy")]
    pub selection_policy: SelectionPolicy,
    #[serde(default = "default_ode_tol")]
    pub ode_tol: f64,
}

fn default_grid() -> usize {
    201
}
fn default_tol() -> f64 {
    1e-6
}
fn default_seed() -> u64 {
    SamplingConfig::default().seed
}
fn default_policy() -> SelectionPolicy {
    SelectionPolicy::DifferentiableSide
}
fn default_ode_tol() -> f64 {
    1e-12
}

impl Default for CheckSpec {
    fn default() -> Self {
        CheckSpec {
            grid_points: default_grid(),
            tol: default_tol(),
            seed: default_seed(),
            selection_policy: default_policy(),
            ode_tol: default_ode_tol(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationSpec {
    #[serde(flatten)]
    pub kind: VariationKind,
    pub anchor: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductSpec {
    /// Index into `expand.variations`.
    pub variation: usize,
    pub order: usize,
    pub t_grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpandSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_grid: Option<Vec<f64>>,
    #[serde(default = "default_alpha_factor")]
    pub alpha_factor: f64,
    #[serde(default)]
    pub variations: Vec<VariationSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub products: Vec<ProductSpec>,
    /// Also run the mollified-system check on smooth systems.
    #[serde(default)]
    pub mainprop: bool,
    /// Coefficient identities for Goh variations.
    #[serde(default)]
    pub identities: bool,
    #[serde(default = "default_eta_exponent")]
    pub eta_exponent: f64,
}

fn default_alpha_factor() -> f64 {
    2.0
}
fn default_eta_exponent() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MollifyPairSpec {
    pub x: FieldSpec,
    pub y: FieldSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<FieldSpec>,
    pub point: Vec<f64>,
    pub etas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MollifySpec {
    pub pairs: Vec<MollifyPairSpec>,
    #[serde(default = "default_noise")]
    pub noise: f64,
}

fn default_noise() -> f64 {
    1e-4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    /// State variable names; x1..xn when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<Vec<String>>,
    pub dimension: usize,
    pub drift: FieldSpec,
    pub controlled: Vec<FieldSpec>,
    pub control_box: BoxSpec,
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub control: Vec<ControlPieceSpec>,
    pub cost: FieldSpec,
    pub target: TargetSet,
    #[serde(default)]
    pub check: CheckSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expand: Option<ExpandSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mollify: Option<MollifySpec>,
}

/// Parses and validates a scenario.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let sc: Scenario = serde_json::from_str(text)
        .map_err(|e| ScenarioError::Parse { line: e.line(), column: e.column(), message: e.to_string() })?;
    sc.compile()?;
    Ok(sc)
}

pub fn to_json(sc: &Scenario) -> String {
    serde_json::to_string_pretty(sc).expect("scenarios serialize")
}

fn expr_error(path: &str, e: nsgoh_expr::ParseError) -> ScenarioError {
    if e.message.starts_with("unknown function") {
        ScenarioError::UnsupportedExpression { path: path.into(), message: e.message }
    } else {
        ScenarioError::Expression { path: path.into(), column: e.column, message: e.message }
    }
}

fn core_error(path: &str, e: CoreError) -> ScenarioError {
    match e {
        CoreError::InvalidField(msg) if msg.contains("sign()") => {
            ScenarioError::UnsupportedExpression { path: path.into(), message: msg }
        }
        CoreError::DimensionError(msg) => ScenarioError::Dimension(format!("{path}: {msg}")),
        other => ScenarioError::Core(other),
    }
}

/// Builds a field on R^n with `out` components.
pub fn compile_field(spec: &FieldSpec, names: &[String], out: usize, path: &str) -> Result<PiecewiseField> {
    let n = names.len();
    let parse_values = |vals: &[String], p: &str| -> Result<Vec<Expr>> {
        if vals.len() != out {
            return Err(ScenarioError::Dimension(format!(
                "{p} has {} components, expected {out} (R^{n} to R^{out})",
                vals.len()
            )));
        }
        vals.iter().enumerate().map(|(k, v)| parse_expr(v, names).map_err(|e| expr_error(&format!("{p}[{k}]"), e))).collect()
    };
    match spec {
        FieldSpec::Smooth(vals) => {
            let exprs = parse_values(vals, path)?;
            PiecewiseField::from_pieces(n, out, vec![(Vec::new(), exprs)], None).map_err(|e| core_error(path, e))
        }
        FieldSpec::Piecewise { pieces, regularity } => {
            let mut raw = Vec::new();
            for (k, p) in pieces.iter().enumerate() {
                let pp = format!("{path}.pieces[{k}]");
                let conds = p
                    .when
                    .iter()
                    .enumerate()
                    .map(|(c, s)| parse_condition(s, names).map_err(|e| expr_error(&format!("{pp}.when[{c}]"), e)))
                    .collect::<Result<Vec<_>>>()?;
                raw.push((conds, parse_values(&p.value, &format!("{pp}.value"))?));
            }
            PiecewiseField::from_pieces(n, out, raw, *regularity).map_err(|e| core_error(path, e))
        }
    }
}

/// A scenario turned into core objects.
#[derive(Debug, Clone)]
pub struct Compiled {
    pub names: Vec<String>,
    pub problem: Problem,
    pub check: CheckConfig,
    pub expansion: ExpansionConfig,
    pub mainprop: MainpropConfig,
    pub variations: Vec<VariationGenerator>,
}

impl Scenario {
    pub fn names(&self) -> Vec<String> {
        match &self.state {
            Some(v) => v.clone(),
            None => (1..=self.dimension).map(|k| format!("x{k}")).collect(),
        }
    }

    pub fn compile(&self) -> Result<Compiled> {
        let n = self.dimension;
        let names = self.names();
        if names.len() != n {
            return Err(ScenarioError::Dimension(format!("{} state names for dimension {n}", names.len())));
        }
        let m = self.controlled.len();
        let f = compile_field(&self.drift, &names, n, "drift")?;
        let g = self
            .controlled
            .iter()
            .enumerate()
            .map(|(k, s)| compile_field(s, &names, n, &format!("controlled[{k}]")))
            .collect::<Result<Vec<_>>>()?;
        let b = &self.control_box;
        if b.lower.len() != m || b.upper.len() != m {
            return Err(ScenarioError::Dimension(format!("control box must have {m} entries per side")));
        }
        let u_box = ControlBox::new(
            b.lower.iter().map(|v| v.unwrap_or(f64::NEG_INFINITY)).collect(),
            b.upper.iter().map(|v| v.unwrap_or(f64::INFINITY)).collect(),
        )
        .map_err(|e| core_error("control_box", e))?;
        let sys = ControlAffineSystem::new(f, g, u_box).map_err(|e| core_error("system", e))?;
        if self.x0.len() != n {
            return Err(ScenarioError::Dimension(format!("x0 has {} entries, expected {n}", self.x0.len())));
        }
        let tname = vec!["t".to_string()];
        let mut pieces = Vec::new();
        for (k, p) in self.control.iter().enumerate() {
            if p.values.len() != m {
                return Err(ScenarioError::Dimension(format!(
                    "control[{k}] has {} channels, expected {m}",
                    p.values.len()
                )));
            }
            let channels = p
                .values
                .iter()
                .enumerate()
                .map(|(c, v)| {
                    parse_expr(v, &tname)
                        .map(|e| Channel::expr(e, p.start, p.end - p.start))
                        .map_err(|e| expr_error(&format!("control[{k}].values[{c}]"), e))
                })
                .collect::<Result<Vec<_>>>()?;
            pieces.push(ControlPiece { start: p.start, end: p.end, channels });
        }
        let u = Control::new(m, pieces).map_err(|e| core_error("control", e))?;
        let cost = compile_field(&self.cost, &names, 1, "cost")?;
        let process = Process { x0: DVector::from_vec(self.x0.clone()), u };
        let problem =
            Problem::new(sys, process, self.horizon, cost, self.target.clone()).map_err(|e| core_error("scenario", e))?;
        let sampling = SamplingConfig { seed: self.check.seed, ..Default::default() };
        let check = CheckConfig {
            grid_points: self.check.grid_points,
            tol: self.check.tol,
            ode_tol: self.check.ode_tol,
            policy: self.check.selection_policy,
            sampling: sampling.clone(),
            ..Default::default()
        };
        let mut expansion = ExpansionConfig::default();
        let mut mainprop = MainpropConfig { sampling, ..Default::default() };
        let mut variations = Vec::new();
        if let Some(x) = &self.expand {
            if let Some(g) = &x.eps_grid {
                expansion.eps_grid = g.clone();
                mainprop.eps_grid = g.clone();
            }
            expansion.alpha_factor = x.alpha_factor;
            mainprop.eta_exponent = x.eta_exponent;
            for (k, v) in x.variations.iter().enumerate() {
                let gen = VariationGenerator::new(v.kind.clone(), v.anchor, v.alpha, m)
                    .map_err(|e| core_error(&format!("expand.variations[{k}]"), e))?;
                variations.push(gen);
            }
            for (k, p) in x.products.iter().enumerate() {
                if p.variation >= variations.len() {
                    return Err(ScenarioError::Dimension(format!("expand.products[{k}] names a missing variation")));
                }
            }
        }
        if let Some(ms) = &self.mollify {
            for (k, p) in ms.pairs.iter().enumerate() {
                let pn = p.point.len();
                let nm: Vec<String> = (1..=pn).map(|i| format!("x{i}")).collect();
                for (s, lbl) in [(Some(&p.x), "x"), (Some(&p.y), "y"), (p.z.as_ref(), "z")] {
                    if let Some(s) = s {
                        compile_field(s, &nm, pn, &format!("mollify.pairs[{k}].{lbl}"))?;
                    }
                }
            }
        }
        Ok(Compiled { names, problem, check, expansion, mainprop, variations })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINI: &str = r#"{
  "name": "mini",
  "dimension": 2,
  "drift": ["0", "x1"],
  "controlled": [["1", "0"]],
  "control_box": {"lower": [-1], "upper": [1]},
  "x0": [0, 0],
  "horizon": 1,
  "control": [{"start": 0, "end": 1, "values": ["0"]}],
  "cost": ["x2"],
  "target": {"kind": "full_space"}
}"#;

    #[test]
    fn minimal_scenario_round_trips() {
        let sc = parse_scenario(MINI).unwrap();
        let again = parse_scenario(&to_json(&sc)).unwrap();
        assert_eq!(sc, again);
        assert_eq!(to_json(&sc), to_json(&again));
    }

    #[test]
    fn errors_are_classified() {
        assert!(matches!(parse_scenario(""), Err(ScenarioError::Parse { .. })));
        let bad = MINI.replace(r#"["1", "0"]"#, r#"["1"]"#);
        assert!(matches!(parse_scenario(&bad), Err(ScenarioError::Dimension(_))));
        let unk = MINI.replace(r#""x1"]"#, r#""tanh(x1)"]"#);
        assert!(matches!(parse_scenario(&unk), Err(ScenarioError::UnsupportedExpression { .. })));
        let mal = MINI.replace(r#""x1"]"#, r#""x1 +"]"#);
        assert!(matches!(parse_scenario(&mal), Err(ScenarioError::Expression { .. })));
        match parse_scenario("{\n  \"name\": 3\n}") {
            Err(ScenarioError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
