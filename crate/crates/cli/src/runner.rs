//! Experiment runner: check, expand and mollify modes, JSON and CSV output.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use nsgoh_core::asymptotic::product::IdentityReport;
use nsgoh_core::asymptotic::{
    coefficient_identities, mainprop_nonsmooth_check, mollification_consistency, product_expansion_residual,
    variation_profile_builder, verify_expansion, ExpansionReport, MainpropReport, ProductReport,
};
use nsgoh_core::asymptotic::smoothing::ConsistencyReport;
use nsgoh_core::conditions::{run_full_check, ConditionReport};
use nsgoh_core::error::CoreError;
use nsgoh_core::system::integrate_trajectory;

use crate::scenario::{compile_field, Compiled, Scenario, ScenarioError};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Check,
    Expand,
    Mollify,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Check => "check",
            Mode::Expand => "expand",
            Mode::Mollify => "mollify",
        }
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Mode, String> {
        match s {
            "check" => Ok(Mode::Check),
            "expand" => Ok(Mode::Expand),
            "mollify" => Ok(Mode::Mollify),
            _ => Err(format!("unknown mode '{s}' (expected check, expand or mollify)")),
        }
    }
}

/// Command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub tol: Option<f64>,
}

/// An experiment failure recorded in place of its result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub kind: String,
    pub message: String,
}

impl ErrorReport {
    pub fn from_core(e: &CoreError) -> ErrorReport {
        let kind = format!("{e:?}");
        let kind = kind.split(|c: char| !c.is_alphanumeric()).next().unwrap_or("Error").to_string();
        ErrorReport { kind, message: e.to_string() }
    }

    pub fn from_scenario(e: &ScenarioError) -> ErrorReport {
        let kind = match e {
            ScenarioError::Parse { .. } => "ParseError",
            ScenarioError::Expression { .. } => "ParseError",
            ScenarioError::UnsupportedExpression { .. } => "UnsupportedExpression",
            ScenarioError::Dimension(_) => "DimensionError",
            ScenarioError::Core(c) => return ErrorReport::from_core(c),
        };
        ErrorReport { kind: kind.into(), message: e.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome<T> {
    Ok { result: T },
    Error { error: ErrorReport },
}

impl<T> Outcome<T> {
    fn of(r: nsgoh_core::error::Result<T>) -> Outcome<T> {
        match r {
            Ok(result) => Outcome::Ok { result },
            Err(e) => Outcome::Error { error: ErrorReport::from_core(&e) },
        }
    }

    pub fn ok(&self) -> Option<&T> {
        match self {
            Outcome::Ok { result } => Some(result),
            Outcome::Error { .. } => None,
        }
    }

    fn is_err(&self) -> bool {
        matches!(self, Outcome::Error { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationExperiment {
    pub index: usize,
    pub kind: String,
    pub anchor: f64,
    pub alpha: f64,
    /// Classical expansion on smooth systems.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expansion: Option<Outcome<ExpansionReport>>,
    /// Mollified-system check.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mainprop: Option<Outcome<MainpropReport>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub identities: Option<Outcome<IdentityReport>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductExperiment {
    pub variation: usize,
    pub order: usize,
    pub outcome: Outcome<ProductReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpandReport {
    pub smooth_system: bool,
    pub variations: Vec<VariationExperiment>,
    pub products: Vec<ProductExperiment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MollifyReport {
    pub pairs: Vec<Outcome<ConsistencyReport>>,
    pub all_non_increasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub scenario: String,
    pub mode: Mode,
    pub seed: u64,
    pub tol: f64,
    pub condition_ids: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub check: Option<ConditionReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expand: Option<ExpandReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mollify: Option<MollifyReport>,
    /// Some condition was violated (check mode).
    pub violations: bool,
    /// Some experiment failed; its entry carries the error.
    pub experiment_errors: usize,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub started_unix_s: f64,
    pub elapsed_s: f64,
    pub tool_version: String,
    pub scenario: String,
    pub mode: Mode,
}

/// Compiles the scenario with overrides applied.
pub fn compile_with(sc: &Scenario, ov: &Overrides) -> Result<Compiled, ScenarioError> {
    let mut c = sc.compile()?;
    if let Some(seed) = ov.seed {
        c.check.sampling.seed = seed;
        c.mainprop.sampling.seed = seed;
    }
    if let Some(tol) = ov.tol {
        c.check.tol = tol;
    }
    Ok(c)
}

/// Runs one mode without touching the file system.
pub fn run(sc: &Scenario, mode: Mode, ov: &Overrides) -> Result<RunReport, ScenarioError> {
    let c = compile_with(sc, ov)?;
    let mut rep = RunReport {
        schema_version: SCHEMA_VERSION,
        scenario: sc.name.clone(),
        mode,
        seed: c.check.sampling.seed,
        tol: c.check.tol,
        condition_ids: nsgoh_core::conditions::CONDITION_IDS.iter().map(|s| s.to_string()).collect(),
        check: None,
        expand: None,
        mollify: None,
        violations: false,
        experiment_errors: 0,
    };
    match mode {
        Mode::Check => {
            let r = run_full_check(&c.problem, &c.check)?;
            rep.violations = r.any_violation();
            rep.check = Some(r);
        }
        Mode::Expand => {
            let r = run_expand(sc, &c);
            rep.experiment_errors = r.variations.iter().map(variation_errors).sum::<usize>()
                + r.products.iter().filter(|p| p.outcome.is_err()).count();
            rep.expand = Some(r);
        }
        Mode::Mollify => {
            let r = run_mollify(sc)?;
            rep.experiment_errors = r.pairs.iter().filter(|p| p.is_err()).count();
            rep.mollify = Some(r);
        }
    }
    Ok(rep)
}

fn variation_errors(v: &VariationExperiment) -> usize {
    [v.expansion.as_ref().map(Outcome::is_err), v.mainprop.as_ref().map(Outcome::is_err), v.identities.as_ref().map(Outcome::is_err)]
        .iter()
        .filter(|e| **e == Some(true))
        .count()
}

fn run_expand(sc: &Scenario, c: &Compiled) -> ExpandReport {
    let sys = &c.problem.sys;
    let process = &c.problem.process;
    let smooth = sys.fields().all(|f| f.is_single_piece());
    let spec = sc.expand.clone().unwrap_or_else(|| serde_json::from_str("{}").expect("defaults"));
    let variations = std::thread::scope(|s| {
        let handles: Vec<_> = c
            .variations
            .iter()
            .enumerate()
            .map(|(index, gen)| {
                let spec = &spec;
                s.spawn(move || {
                    let expansion = smooth.then(|| Outcome::of(verify_expansion(sys, process, gen, &c.expansion)));
                    let mainprop =
                        (!smooth || spec.mainprop).then(|| Outcome::of(mainprop_nonsmooth_check(sys, process, gen, &c.mainprop)));
                    let identities = (spec.identities && matches!(gen.kind, nsgoh_core::variation::VariationKind::Goh { .. }))
                        .then(|| Outcome::of(coefficient_identities(&process.u, gen, &c.expansion.eps_grid)));
                    VariationExperiment {
                        index,
                        kind: gen.kind.name().into(),
                        anchor: gen.anchor,
                        alpha: gen.alpha,
                        expansion,
                        mainprop,
                        identities,
                    }
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("experiment thread panicked")).collect::<Vec<_>>()
    });
    let products = std::thread::scope(|s| {
        let handles: Vec<_> = spec
            .products
            .iter()
            .map(|p| {
                s.spawn(move || {
                    let gen = &c.variations[p.variation];
                    let outcome = Outcome::of((|| {
                        let xb = integrate_trajectory(sys, &process.u, &process.x0, gen.anchor, c.expansion.tol)?
                            .end_state()
                            .clone();
                        let mut fields = vec![sys.f.clone()];
                        fields.extend(sys.g.iter().cloned());
                        let build = variation_profile_builder(&process.u, gen);
                        product_expansion_residual(&fields, &build, &xb, &p.t_grid, p.order, c.expansion.tol)
                    })());
                    ProductExperiment { variation: p.variation, order: p.order, outcome }
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("experiment thread panicked")).collect::<Vec<_>>()
    });
    ExpandReport { smooth_system: smooth, variations, products }
}

fn run_mollify(sc: &Scenario) -> Result<MollifyReport, ScenarioError> {
    let Some(ms) = &sc.mollify else {
        return Ok(MollifyReport { pairs: Vec::new(), all_non_increasing: true });
    };
    let mut compiled = Vec::new();
    for (k, p) in ms.pairs.iter().enumerate() {
        let n = p.point.len();
        let names: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        let path = format!("mollify.pairs[{k}]");
        let x = compile_field(&p.x, &names, n, &format!("{path}.x"))?;
        let y = compile_field(&p.y, &names, n, &format!("{path}.y"))?;
        let z = p.z.as_ref().map(|z| compile_field(z, &names, n, &format!("{path}.z"))).transpose()?;
        compiled.push((x, y, z, DVector::from_vec(p.point.clone()), &p.etas));
    }
    let noise = ms.noise;
    let pairs = std::thread::scope(|s| {
        let handles: Vec<_> = compiled
            .iter()
            .map(|(x, y, z, p, etas)| s.spawn(move || Outcome::of(mollification_consistency(x, y, z.as_ref(), p, etas, noise))))
            .collect();
        handles.into_iter().map(|h| h.join().expect("experiment thread panicked")).collect::<Vec<_>>()
    });
    let all_non_increasing = pairs.iter().all(|p| p.ok().is_some_and(|r| r.non_increasing));
    Ok(MollifyReport { pairs, all_non_increasing })
}

fn num(v: f64) -> String {
    format!("{v:.12e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn row(cells: impl IntoIterator<Item = String>) -> String {
    let mut s = cells.into_iter().collect::<Vec<_>>().join(",");
    s.push('\n');
    s
}

/// CSV tables for a report, as (file name, contents).
pub fn csv_tables(rep: &RunReport, sc: &Scenario) -> Vec<(String, String)> {
    let mut out = Vec::new();
    if let Some(ch) = &rep.check {
        let mut s = String::from("block,candidate,condition,t,residual\n");
        for (block, list) in [("normal", &ch.normal), ("abnormal", &ch.abnormal)] {
            for (k, c) in list.iter().enumerate() {
                for e in &c.entries {
                    for (t, r) in e.times.iter().zip(&e.residuals) {
                        s += &row([block.into(), k.to_string(), e.id.clone(), num(*t), opt(*r)]);
                    }
                }
            }
        }
        out.push(("residuals.csv".into(), s));
        if let Some(c) = ch.normal.first().or(ch.abnormal.first()) {
            let n = sc.dimension;
            let mut s = String::from("t");
            for k in 1..=n {
                let _ = write!(s, ",x{k}");
            }
            for k in 1..=n {
                let _ = write!(s, ",p{k}");
            }
            s.push('\n');
            if let Ok(comp) = sc.compile() {
                if let Ok(traj) = comp.problem.trajectory(comp.check.ode_tol) {
                    for (t, p) in c.times.iter().zip(&c.p_path) {
                        let x = traj.eval(*t);
                        s += &row(std::iter::once(num(*t)).chain(x.iter().map(|v| num(*v))).chain(p.iter().map(|v| num(*v))));
                    }
                }
            }
            out.push(("trajectory.csv".into(), s));
        }
    }
    if let Some(ex) = &rep.expand {
        for v in &ex.variations {
            if let Some(r) = v.expansion.as_ref().and_then(Outcome::ok) {
                let mut s = String::from("eps");
                for k in 1..=r.increments.first().map_or(0, Vec::len) {
                    let _ = write!(s, ",d{k}");
                }
                s += ",residual\n";
                for ((e, d), res) in r.eps_grid.iter().zip(&r.increments).zip(&r.residuals) {
                    s += &row(std::iter::once(num(*e)).chain(d.iter().map(|v| num(*v))).chain([num(*res)]));
                }
                out.push((format!("expansion_{}_{}.csv", v.index, v.kind), s));
            }
            if let Some(r) = v.mainprop.as_ref().and_then(Outcome::ok) {
                let mut s = String::from("eps,eta");
                for k in 1..=r.rows.first().map_or(0, |x| x.normalized.len()) {
                    let _ = write!(s, ",v{k}");
                }
                s += ",distance\n";
                for x in &r.rows {
                    s += &row([num(x.eps), num(x.eta)].into_iter().chain(x.normalized.iter().map(|v| num(*v))).chain([num(x.distance)]));
                }
                out.push((format!("mainprop_{}_{}.csv", v.index, v.kind), s));
            }
            if let Some(r) = v.identities.as_ref().and_then(Outcome::ok) {
                let mut s = String::from("eps,a0,ah,a0k,remainder,quadrature_gap\n");
                for x in &r.rows {
                    s += &row([x.eps, x.a0, x.ah, x.a0k, x.remainder, x.quadrature_gap].map(num));
                }
                out.push((format!("identities_{}.csv", v.index), s));
            }
        }
        for (k, p) in ex.products.iter().enumerate() {
            if let Some(r) = p.outcome.ok() {
                let mut s = String::from("t,residual,log_degree1\n");
                for x in &r.rows {
                    s += &row([x.t, x.residual, x.log_degree1].map(num));
                }
                out.push((format!("product_{k}_order{}.csv", p.order), s));
            }
        }
    }
    if let Some(m) = &rep.mollify {
        for (k, p) in m.pairs.iter().enumerate() {
            if let Some(r) = p.ok() {
                let mut s = String::from("eta,error\n");
                for x in &r.rows {
                    s += &row([x.eta, x.error].map(num));
                }
                out.push((format!("mollify_{k}.csv"), s));
            }
        }
    }
    out
}

/// Runs and writes report.json, metadata.json and the CSV tables to `dir`.
pub fn run_to_dir(sc: &Scenario, mode: Mode, ov: &Overrides, dir: &Path) -> anyhow::Result<RunReport> {
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
    let clock = Instant::now();
    fs::create_dir_all(dir)?;
    let rep = match run(sc, mode, ov) {
        Ok(r) => r,
        Err(e) => {
            let err = serde_json::json!({ "schema_version": SCHEMA_VERSION, "scenario": sc.name, "mode": mode, "error": ErrorReport::from_scenario(&e) });
            fs::write(dir.join("error.json"), serde_json::to_string_pretty(&err)?)?;
            return Err(e.into());
        }
    };
    fs::write(dir.join("report.json"), rep.to_json())?;
    for (name, body) in csv_tables(&rep, sc) {
        fs::write(dir.join(name), body)?;
    }
    let meta = Metadata {
        started_unix_s: started,
        elapsed_s: clock.elapsed().as_secs_f64(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        scenario: sc.name.clone(),
        mode,
    };
    fs::write(dir.join("metadata.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(rep)
}
