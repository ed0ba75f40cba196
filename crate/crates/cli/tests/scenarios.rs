use std::path::PathBuf;
use std::process::Command;

use nsgoh_cli::runner::{csv_tables, run, run_to_dir, Mode, Overrides};
use nsgoh_cli::scenario::{parse_scenario, to_json, ScenarioError};

fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn golden() -> Vec<(String, String)> {
    let mut v: Vec<(String, String)> = std::fs::read_dir(scenario_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .map(|p| (p.file_stem().unwrap().to_string_lossy().into_owned(), std::fs::read_to_string(&p).unwrap()))
        .collect();
    v.sort();
    v
}

fn load(name: &str) -> String {
    std::fs::read_to_string(scenario_dir().join(format!("{name}.json"))).unwrap()
}

#[test]
fn golden_set_round_trips() {
    let all = golden();
    assert!(all.len() >= 7);
    for (name, text) in all {
        let sc = parse_scenario(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        let once = to_json(&sc);
        let back = parse_scenario(&once).unwrap();
        assert_eq!(back, sc, "{name}");
        assert_eq!(to_json(&back), once, "{name}");
    }
}

#[test]
fn bundled_example_has_the_stated_data() {
    let sc = parse_scenario(&load("goh_lc_example")).unwrap();
    assert_eq!(sc.dimension, 3);
    assert_eq!(sc.controlled.len(), 1);
    assert_eq!(sc.horizon, 4.0);
    assert_eq!(sc.x0, vec![0.0, 0.0, -4.0]);
}

#[test]
fn empty_file_is_a_parse_error() {
    assert!(matches!(parse_scenario(""), Err(ScenarioError::Parse { .. })));
    assert!(matches!(parse_scenario("   \n"), Err(ScenarioError::Parse { line: 2, .. })));
}

#[test]
fn short_control_field_is_a_dimension_error() {
    let mut v: serde_json::Value = serde_json::from_str(&load("goh_lc_example")).unwrap();
    v["controlled"][0] = serde_json::json!(["1", "0"]);
    let text = serde_json::to_string(&v).unwrap();
    assert!(matches!(parse_scenario(&text), Err(ScenarioError::Dimension(_))));
}

#[test]
fn expression_errors_name_the_field() {
    let text = load("lc2_planar").replace(r#""x1""#, r#""x1 * (""#);
    match parse_scenario(&text) {
        Err(ScenarioError::Expression { path, .. }) => assert_eq!(path, "drift[1]"),
        other => panic!("{other:?}"),
    }
    let text = load("lc2_planar").replace(r#""x1""#, r#""sign(x1)""#);
    assert!(matches!(parse_scenario(&text), Err(ScenarioError::UnsupportedExpression { .. })));
    let text = load("lc2_planar").replace(r#""x1""#, r#""x9""#);
    assert!(matches!(parse_scenario(&text), Err(ScenarioError::Expression { .. })));
}

#[test]
fn reports_are_deterministic() {
    for (name, mode) in [("goh_lc_example", Mode::Check), ("heisenberg_goh", Mode::Expand), ("mollify_abs_pair", Mode::Mollify)] {
        let sc = parse_scenario(&load(name)).unwrap();
        let a = run(&sc, mode, &Overrides::default()).unwrap().to_json();
        let b = run(&sc, mode, &Overrides::default()).unwrap().to_json();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn seed_and_tol_overrides_reach_the_report() {
    let sc = parse_scenario(&load("lq_toy")).unwrap();
    let rep = run(&sc, Mode::Check, &Overrides { seed: Some(7), tol: Some(1e-5) }).unwrap();
    assert_eq!(rep.seed, 7);
    assert_eq!(rep.tol, 1e-5);
    assert_eq!(rep.check.unwrap().provenance.seed, 7);
}

#[test]
fn check_mode_writes_report_tables_and_metadata() {
    let dir = std::env::temp_dir().join(format!("nsgoh-check-{}", std::process::id()));
    let sc = parse_scenario(&load("heisenberg_goh")).unwrap();
    let rep = run_to_dir(&sc, Mode::Check, &Overrides::default(), &dir).unwrap();
    assert!(rep.violations);
    for f in ["report.json", "metadata.json", "residuals.csv", "trajectory.csv"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    let report = std::fs::read_to_string(dir.join("report.json")).unwrap();
    assert!(!report.contains("elapsed"));
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["check"]["verdict"], "ruled out by Goh");
    let traj = std::fs::read_to_string(dir.join("trajectory.csv")).unwrap();
    assert!(traj.starts_with("t,x1,x2,x3,p1,p2,p3\n"));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn expand_and_mollify_tables() {
    let sc = parse_scenario(&load("heisenberg_goh")).unwrap();
    let rep = run(&sc, Mode::Expand, &Overrides::default()).unwrap();
    let names: Vec<String> = csv_tables(&rep, &sc).into_iter().map(|t| t.0).collect();
    assert!(names.contains(&"expansion_0_goh.csv".to_string()));
    assert!(names.contains(&"product_0_order2.csv".to_string()));
    assert!(names.contains(&"identities_0.csv".to_string()));
    let sc = parse_scenario(&load("mollify_abs_pair")).unwrap();
    let rep = run(&sc, Mode::Mollify, &Overrides::default()).unwrap();
    let tables = csv_tables(&rep, &sc);
    assert_eq!(tables.len(), 3);
    assert!(tables[0].1.starts_with("eta,error\n"));
}

#[test]
fn heisenberg_expand_gives_the_bracket_direction() {
    let sc = parse_scenario(&load("heisenberg_goh")).unwrap();
    let rep = run(&sc, Mode::Expand, &Overrides::default()).unwrap();
    let ex = rep.expand.unwrap();
    let r = ex.variations[0].expansion.as_ref().unwrap().ok().unwrap();
    assert_eq!(r.predicted_direction, vec![0.0, 0.0, 1.0]);
    assert!(r.residual_fit.meets(1.3));
}

#[test]
fn binary_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_nsgoh");
    let out = std::env::temp_dir().join(format!("nsgoh-bin-{}", std::process::id()));
    let status = |args: &[&str]| Command::new(exe).args(args).output().unwrap().status.code();
    let path = |n: &str| scenario_dir().join(format!("{n}.json")).to_string_lossy().into_owned();
    let o = out.to_string_lossy().into_owned();
    assert_eq!(status(&["run", &path("lq_toy"), "--mode", "check", "--out", &o]), Some(0));
    assert_eq!(status(&["run", &path("heisenberg_goh"), "--mode", "check", "--out", &o, "--seed", "3"]), Some(2));
    assert_eq!(status(&["run", &path("lc2_planar"), "--mode", "expand", "--out", &o, "--tol", "1e-6"]), Some(0));
    assert_eq!(status(&["run", "/nonexistent.json", "--out", &o]), Some(1));
    let bad = out.join("bad.json");
    std::fs::write(&bad, "{").unwrap();
    assert_eq!(status(&["run", &bad.to_string_lossy(), "--out", &o]), Some(1));
    std::fs::remove_dir_all(&out).unwrap();
}
