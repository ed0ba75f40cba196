//! Necessary conditions i)–vii) for a candidate process: multipliers,
//! adjoint consistency, transversality, Hamiltonian maximisation and the
//! nonsmooth Goh and Legendre–Clebsch conditions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::geometry::bracket::{clarke_jacobian, Bracket3Field, SetValuedField};
use crate::geometry::{PiecewiseField, SamplingConfig};
use crate::ode::OdeStats;
use crate::system::{
    hamiltonian, integrate_adjoint, integrate_trajectory, transport_matrix, ControlAffineSystem, Costate, Process,
    SelectionPolicy, Trajectory,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetSet {
    FullSpace,
    /// {x : a·x >= b}.
    HalfSpace { a: Vec<f64>, b: f64 },
    /// {x : A x = c}, rows of A given as `a`.
    Subspace { a: Vec<Vec<f64>>, c: Vec<f64> },
}

impl TargetSet {
    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            TargetSet::FullSpace => Ok(()),
            TargetSet::HalfSpace { a, .. } => {
                if a.len() != n {
                    return Err(CoreError::DimensionError(format!("half-space normal has {} entries, expected {n}", a.len())));
                }
                if a.iter().all(|v| *v == 0.0) {
                    return Err(CoreError::DimensionError("half-space normal must be nonzero".into()));
                }
                Ok(())
            }
            TargetSet::Subspace { a, c } => {
                if a.len() != c.len() || a.is_empty() {
                    return Err(CoreError::DimensionError("subspace needs one right-hand side per row".into()));
                }
                if a.iter().any(|r| r.len() != n) {
                    return Err(CoreError::DimensionError(format!("subspace rows must have {n} entries")));
                }
                let m = DMatrix::from_fn(a.len(), n, |r, k| a[r][k]);
                if m.rank(1e-10) < a.len() {
                    return Err(CoreError::DimensionError("subspace matrix lacks full row rank".into()));
                }
                Ok(())
            }
        }
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        match self {
            TargetSet::FullSpace => true,
            TargetSet::HalfSpace { a, b } => DVector::from_column_slice(a).dot(x) >= b - tol,
            TargetSet::Subspace { a, c } => {
                a.iter().zip(c).all(|(r, ci)| (DVector::from_column_slice(r).dot(x) - ci).abs() <= tol)
            }
        }
    }

    /// Normals spanning the polar of the tangent cone at x, up to sign.
    pub fn active_normals(&self, x: &DVector<f64>, tol: f64) -> Vec<DVector<f64>> {
        match self {
            TargetSet::FullSpace => Vec::new(),
            TargetSet::HalfSpace { a, b } => {
                let a = DVector::from_column_slice(a);
                if (a.dot(x) - b).abs() <= tol * (1.0 + b.abs()) {
                    vec![a]
                } else {
                    Vec::new()
                }
            }
            TargetSet::Subspace { a, .. } => a.iter().map(|r| DVector::from_column_slice(r)).collect(),
        }
    }
}

/// Optimal control problem data with its candidate process.
#[derive(Debug, Clone)]
pub struct Problem {
    pub sys: ControlAffineSystem,
    pub process: Process,
    pub horizon: f64,
    /// Scalar cost, out_dim 1.
    pub cost: PiecewiseField,
    pub target: TargetSet,
}

impl Problem {
    pub fn new(
        sys: ControlAffineSystem,
        process: Process,
        horizon: f64,
        cost: PiecewiseField,
        target: TargetSet,
    ) -> Result<Problem> {
        let n = sys.n();
        if process.x0.len() != n {
            return Err(CoreError::DimensionError(format!("x0 has {} entries, expected {n}", process.x0.len())));
        }
        if process.u.m != sys.m() {
            return Err(CoreError::DimensionError(format!(
                "control has {} channels, expected {}",
                process.u.m,
                sys.m()
            )));
        }
        if cost.dim != n || cost.out_dim != 1 {
            return Err(CoreError::DimensionError(format!(
                "cost maps R^{} to R^{}, expected R^{n} to R",
                cost.dim, cost.out_dim
            )));
        }
        if !(horizon > 0.0) || horizon > process.u.horizon() + 1e-12 {
            return Err(CoreError::DimensionError(format!(
                "horizon {horizon} must be positive and covered by the control"
            )));
        }
        target.validate(n)?;
        Ok(Problem { sys, process, horizon, cost, target })
    }

    pub fn trajectory(&self, tol: f64) -> Result<Trajectory> {
        integrate_trajectory(&self.sys, &self.process.u, &self.process.x0, self.horizon, tol)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckConfig {
    pub grid_points: usize,
    pub tol: f64,
    /// Violated only above safety * tol.
    pub safety: f64,
    pub singular_margin: f64,
    /// Lattice points per axis of U for the Hamiltonian check.
    pub lattice_per_axis: usize,
    pub ode_tol: f64,
    pub policy: SelectionPolicy,
    pub sampling: SamplingConfig,
    /// Condition ii) is evaluated on every k-th grid time.
    pub transport_stride: usize,
    /// Coefficients of target normals, scaled by max(1, |xi|).
    pub multiplier_grid: Vec<f64>,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            grid_points: 201,
            tol: 1e-6,
            safety: 2.0,
            singular_margin: 1e-9,
            lattice_per_axis: 11,
            ode_tol: 1e-12,
            policy: SelectionPolicy::DifferentiableSide,
            sampling: SamplingConfig::default(),
            transport_stride: 20,
            multiplier_grid: vec![-1.0, -0.5, 0.0, 0.5, 1.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Satisfied,
    Violated,
    Inconclusive,
}

impl Verdict {
    pub fn of(residual: f64, tol: f64, safety: f64) -> Verdict {
        if residual <= tol {
            Verdict::Satisfied
        } else if residual >= safety * tol {
            Verdict::Violated
        } else {
            Verdict::Inconclusive
        }
    }
}

pub const CONDITION_IDS: [&str; 7] = ["i", "ii", "iii", "iv", "v", "vi", "vii"];

pub fn condition_name(id: &str) -> &'static str {
    match id {
        "i" => "non-triviality",
        "ii" => "adjoint equation",
        "iii" => "transversality",
        "iv" => "Hamiltonian maximization",
        "v" => "Goh",
        "vi" => "LC2",
        "vii" => "LC3",
        _ => "unknown",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionEntry {
    pub id: String,
    pub name: String,
    pub times: Vec<f64>,
    /// None where the condition is not asserted at that time.
    pub residuals: Vec<Option<f64>>,
    pub threshold: f64,
    pub verdict: Verdict,
    pub notes: Vec<String>,
}

impl ConditionEntry {
    fn new(id: &str, threshold: f64) -> ConditionEntry {
        ConditionEntry {
            id: id.into(),
            name: condition_name(id).into(),
            times: Vec::new(),
            residuals: Vec::new(),
            threshold,
            verdict: Verdict::Inconclusive,
            notes: Vec::new(),
        }
    }

    fn push(&mut self, t: f64, r: Option<f64>) {
        self.times.push(t);
        self.residuals.push(r);
    }

    /// Verdict over the asserted times; `blocked` marks times where the
    /// hypotheses could not be confirmed.
    fn finish(mut self, safety: f64, blocked: bool) -> ConditionEntry {
        let vals: Vec<f64> = self.residuals.iter().flatten().cloned().collect();
        let tol = self.threshold;
        self.verdict = if vals.iter().any(|r| Verdict::of(*r, tol, safety) == Verdict::Violated) {
            Verdict::Violated
        } else if vals.is_empty() || blocked || vals.iter().any(|r| *r > tol) {
            Verdict::Inconclusive
        } else {
            Verdict::Satisfied
        };
        if vals.is_empty() && !self.notes.iter().any(|n| n.starts_with("vacuous")) {
            self.notes.push("no grid time qualifies".into());
        }
        self
    }

    fn vacuous(id: &str, threshold: f64, why: &str) -> ConditionEntry {
        let mut e = ConditionEntry::new(id, threshold);
        e.verdict = Verdict::Satisfied;
        e.notes.push(format!("vacuous: {why}"));
        e
    }

    pub fn max_residual(&self) -> Option<f64> {
        self.residuals.iter().flatten().cloned().reduce(f64::max)
    }
}

/// A multiplier candidate (p(T), lambda) with its costate.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub lambda: f64,
    pub p_terminal: DVector<f64>,
    /// Cost subgradient and target-normal coefficients it was built from.
    pub xi: DVector<f64>,
    pub normal_coeffs: Vec<f64>,
    pub costate: Costate,
}

impl Candidate {
    pub fn is_normal(&self) -> bool {
        self.lambda > 0.0
    }
}

fn dedupe_key(v: &DVector<f64>) -> Vec<i64> {
    v.iter().map(|x| (x * 1e9).round() as i64).collect()
}

/// Transversality candidates p(T) = lambda xi + sum mu_k a_k, normalised to
/// |(p(T), lambda)| = 1, each with its backward costate.
pub fn build_multipliers(problem: &Problem, traj: &Trajectory, cfg: &CheckConfig) -> Result<Vec<Candidate>> {
    let n = problem.sys.n();
    let xt = traj.end_state().clone();
    let xis: Vec<DVector<f64>> = clarke_jacobian(&problem.cost, &xt, &cfg.sampling)?.limits.vertices;
    let normals = problem.target.active_normals(&xt, 1e-9);
    if normals.len() > 2 {
        return Err(CoreError::DimensionError("at most two target normals are supported".into()));
    }
    let mut combos: Vec<Vec<f64>> = vec![Vec::new()];
    for _ in &normals {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                cfg.multiplier_grid.iter().map(move |g| {
                    let mut d = c.clone();
                    d.push(*g);
                    d
                })
            })
            .collect();
    }
    let mut raw: Vec<(f64, DVector<f64>, DVector<f64>, Vec<f64>)> = Vec::new();
    for xi in &xis {
        let scale = xi.norm().max(1.0);
        for c in &combos {
            let mut p = xi.clone();
            let mu: Vec<f64> = c.iter().map(|v| v * scale).collect();
            for (a, m) in normals.iter().zip(&mu) {
                p.axpy(*m, a, 1.0);
            }
            raw.push((1.0, p, xi.clone(), mu));
        }
    }
    for c in &combos {
        if c.iter().all(|v| *v == 0.0) {
            continue;
        }
        let mut p = DVector::zeros(n);
        for (a, m) in normals.iter().zip(c) {
            p.axpy(*m, a, 1.0);
        }
        raw.push((0.0, p, DVector::zeros(n), c.clone()));
    }
    let mut seen = Vec::new();
    let mut out = Vec::new();
    for (lambda, p, xi, mu) in raw {
        if p.norm() < 1e-12 {
            continue;
        }
        let s = (p.norm_squared() + lambda * lambda).sqrt();
        let (p, lambda) = (p / s, lambda / s);
        let mut key = dedupe_key(&p);
        key.push((lambda * 1e9).round() as i64);
        if seen.contains(&key) {
            continue;
        }
        seen.push(key);
        let costate = integrate_adjoint(&problem.sys, traj, &problem.process.u, &p, lambda, cfg.policy, cfg.ode_tol)?;
        out.push(Candidate { lambda, p_terminal: p, xi, normal_coeffs: mu, costate });
    }
    if out.is_empty() {
        return Err(CoreError::NoCandidate("only the zero multiplier is available".into()));
    }
    Ok(out)
}

/// Uniform grid plus the control breakpoints inside [0, T].
pub fn time_grid(problem: &Problem, points: usize) -> Vec<f64> {
    if points == 0 {
        return Vec::new();
    }
    let (t0, t1) = (problem.process.u.start(), problem.horizon);
    let mut ts: Vec<f64> = if points == 1 {
        vec![t0]
    } else {
        (0..points).map(|k| t0 + (t1 - t0) * k as f64 / (points - 1) as f64).collect()
    };
    ts.extend(problem.process.u.breakpoints().into_iter().filter(|t| *t > t0 && *t < t1));
    ts.sort_by(f64::total_cmp);
    ts.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
    ts
}

fn interval_distance((lo, hi): (f64, f64)) -> f64 {
    if lo <= 0.0 && hi >= 0.0 {
        0.0
    } else {
        lo.abs().min(hi.abs())
    }
}

/// |p(t) - Phi(T,t)^T p(T)| on the given times.
pub fn transport_consistency(problem: &Problem, traj: &Trajectory, costate: &Costate, times: &[f64], cfg: &CheckConfig) -> Result<Vec<f64>> {
    let t_end = traj.end();
    times
        .iter()
        .map(|&t| {
            let phi = transport_matrix(&problem.sys, traj, &problem.process.u, cfg.policy, t, t_end, cfg.ode_tol)?;
            Ok((costate.eval(t) - phi.transpose() * &costate.terminal).norm())
        })
        .collect()
}

/// max over unit v of |p(t)·Phi(t,t0) v - p(t0)·v| on the given times.
pub fn variational_duality(problem: &Problem, traj: &Trajectory, costate: &Costate, t0: f64, times: &[f64], cfg: &CheckConfig) -> Result<f64> {
    let p0 = costate.eval(t0);
    let mut worst: f64 = 0.0;
    for &t in times.iter().filter(|t| **t >= t0) {
        let phi = transport_matrix(&problem.sys, traj, &problem.process.u, cfg.policy, t0, t, cfg.ode_tol)?;
        let row = phi.transpose() * costate.eval(t);
        worst = worst.max((row - &p0).amax());
    }
    Ok(worst)
}

/// Per-time data shared by the checks.
struct Sample {
    t: f64,
    x: DVector<f64>,
    u: DVector<f64>,
    singular: bool,
}

fn samples(problem: &Problem, traj: &Trajectory, times: &[f64], margin: f64) -> Vec<Sample> {
    times
        .iter()
        .map(|&t| {
            let u = problem.process.u.eval(t.min(problem.horizon));
            Sample { t, x: traj.eval(t), singular: problem.sys.u_box.interior_margin(&u) >= margin, u }
        })
        .collect()
}

struct Brackets {
    goh: Vec<(usize, usize, SetValuedField)>,
    lc2: Vec<SetValuedField>,
    lc3: std::result::Result<Bracket3Field, String>,
}

impl Brackets {
    fn new(sys: &ControlAffineSystem) -> Result<Brackets> {
        let m = sys.m();
        let mut goh = Vec::new();
        for j in 0..m {
            for i in j + 1..m {
                goh.push((j + 1, i + 1, SetValuedField::new(PiecewiseField::bracket(&sys.g[j], &sys.g[i])?)));
            }
        }
        let lc2 = sys.g.iter().map(|g| Ok(SetValuedField::new(PiecewiseField::bracket(&sys.f, g)?))).collect::<Result<_>>()?;
        let lc3 = if m == 1 { Bracket3Field::new(&sys.g[0], &sys.f, &sys.g[0]).map_err(|e| e.to_string()) } else { Err(String::new()) };
        Ok(Brackets { goh, lc2, lc3 })
    }
}

/// Outcome of all checks for one candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub lambda: f64,
    pub p_terminal: Vec<f64>,
    pub xi: Vec<f64>,
    pub normal_coeffs: Vec<f64>,
    pub normal: bool,
    pub times: Vec<f64>,
    pub p_path: Vec<Vec<f64>>,
    pub entries: Vec<ConditionEntry>,
    pub survives: bool,
    pub violated: Vec<String>,
    pub adjoint_stats: OdeStats,
}

impl CandidateReport {
    pub fn entry(&self, id: &str) -> Option<&ConditionEntry> {
        self.entries.iter().find(|e| e.id == id)
    }
}

fn lattice(problem: &Problem, cfg: &CheckConfig) -> Vec<DVector<f64>> {
    let per = if problem.sys.m() > 3 { 3 } else { cfg.lattice_per_axis };
    problem.sys.u_box.lattice(per)
}

/// Evaluates conditions i)–vii) for one candidate on the given times.
pub fn evaluate_candidate(
    problem: &Problem,
    traj: &Trajectory,
    cand: &Candidate,
    times: &[f64],
    cfg: &CheckConfig,
) -> Result<CandidateReport> {
    let sys = &problem.sys;
    let tol = cfg.tol;
    let pts = samples(problem, traj, times, cfg.singular_margin);
    let ps: Vec<DVector<f64>> = pts.iter().map(|s| cand.costate.eval(s.t)).collect();
    let br = Brackets::new(sys)?;
    let mut entries = Vec::new();

    // i) |(p(T), lambda)| = 1, lambda >= 0
    let mut e = ConditionEntry::new("i", tol);
    let norm = (cand.p_terminal.norm_squared() + cand.lambda * cand.lambda).sqrt();
    e.push(problem.horizon, Some((norm - 1.0).abs() + (-cand.lambda).max(0.0)));
    entries.push(e.finish(cfg.safety, false));

    // ii) adjoint equation via transport consistency
    let mut e = ConditionEntry::new("ii", tol);
    let stride = cfg.transport_stride.max(1);
    let sub: Vec<f64> = times.iter().step_by(stride).cloned().collect();
    for (t, r) in sub.iter().zip(transport_consistency(problem, traj, &cand.costate, &sub, cfg)?) {
        e.push(*t, Some(r));
    }
    entries.push(e.finish(cfg.safety, false));

    // iii) p(T) - lambda xi in the span of the active normals
    let mut e = ConditionEntry::new("iii", tol);
    let xt = traj.end_state();
    let normals = problem.target.active_normals(xt, 1e-9);
    let proj = if normals.is_empty() {
        DMatrix::identity(sys.n(), sys.n())
    } else {
        let nm = DMatrix::from_columns(&normals);
        let pinv = nm.clone().pseudo_inverse(1e-12).map_err(|s| CoreError::DimensionError(s.into()))?;
        DMatrix::identity(sys.n(), sys.n()) - &nm * pinv
    };
    let xis = clarke_jacobian(&problem.cost, xt, &cfg.sampling)?.limits;
    let hull = xis.map(|v| &proj * v * cand.lambda);
    let feasible = problem.target.contains(xt, 1e-9);
    e.push(problem.horizon, Some(hull.distance(&(&proj * &cand.p_terminal))));
    if !feasible {
        e.notes.push("endpoint is outside the target".into());
    }
    entries.push(e.finish(cfg.safety, !feasible));

    // iv) Hamiltonian maximisation on the U lattice
    let mut e = ConditionEntry::new("iv", tol);
    let lat = lattice(problem, cfg);
    if problem.sys.u_box.lower.iter().chain(&problem.sys.u_box.upper).any(|b| !b.is_finite()) {
        e.notes.push("unbounded control axes are sampled at their finite endpoint or 0".into());
    }
    for (s, p) in pts.iter().zip(&ps) {
        let h_bar = hamiltonian(sys, &s.x, p, &s.u);
        let h_max = lat.iter().map(|v| hamiltonian(sys, &s.x, p, v)).fold(h_bar, f64::max);
        e.push(s.t, Some(h_max - h_bar));
    }
    entries.push(e.finish(cfg.safety, false));

    let note_singular = |e: &mut ConditionEntry| {
        let skipped = pts.iter().filter(|s| !s.singular).count();
        if skipped > 0 {
            e.notes.push(format!("{skipped} grid times with u on the boundary of U are not asserted"));
        }
    };

    // v) Goh
    if sys.m() == 1 {
        entries.push(ConditionEntry::vacuous("v", tol, "single control"));
    } else {
        let mut e = ConditionEntry::new("v", tol);
        for (s, p) in pts.iter().zip(&ps) {
            if !s.singular {
                e.push(s.t, None);
                continue;
            }
            let mut r: f64 = 0.0;
            for (_, _, b) in &br.goh {
                r = r.max(interval_distance(b.at(&s.x, &cfg.sampling)?.hull.dot_interval(p)));
            }
            e.push(s.t, Some(r));
        }
        note_singular(&mut e);
        entries.push(e.finish(cfg.safety, false));
    }

    // vi) step-2
    let mut e = ConditionEntry::new("vi", tol);
    for (s, p) in pts.iter().zip(&ps) {
        if !s.singular {
            e.push(s.t, None);
            continue;
        }
        let mut r: f64 = 0.0;
        for b in &br.lc2 {
            r = r.max(interval_distance(b.at(&s.x, &cfg.sampling)?.hull.dot_interval(p)));
        }
        e.push(s.t, Some(r));
    }
    note_singular(&mut e);
    entries.push(e.finish(cfg.safety, false));

    // vii) step-3
    if sys.m() != 1 {
        entries.push(ConditionEntry::vacuous("vii", tol, "stated for a single control"));
    } else {
        let mut e = ConditionEntry::new("vii", tol);
        match &br.lc3 {
            Ok(b3) => {
                for (s, p) in pts.iter().zip(&ps) {
                    if !s.singular {
                        e.push(s.t, None);
                        continue;
                    }
                    e.push(s.t, Some(b3.at(&s.x, &cfg.sampling)?.hull.dot_interval(p).0));
                }
                note_singular(&mut e);
                entries.push(e.finish(cfg.safety, false));
            }
            Err(why) => {
                for s in &pts {
                    e.push(s.t, None);
                }
                e.notes.push(format!("regularity hypothesis not met: {why}"));
                entries.push(e.finish(cfg.safety, true));
            }
        }
    }

    let violated: Vec<String> = entries.iter().filter(|e| e.verdict == Verdict::Violated).map(|e| e.id.clone()).collect();
    Ok(CandidateReport {
        lambda: cand.lambda,
        p_terminal: cand.p_terminal.iter().cloned().collect(),
        xi: cand.xi.iter().cloned().collect(),
        normal_coeffs: cand.normal_coeffs.clone(),
        normal: cand.is_normal(),
        times: times.to_vec(),
        p_path: ps.iter().map(|p| p.iter().cloned().collect()).collect(),
        survives: violated.is_empty(),
        violated,
        entries,
        adjoint_stats: cand.costate.stats,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub tol: f64,
    pub safety: f64,
    pub ode_tol: f64,
    pub grid_points: usize,
    pub policy: String,
    pub trajectory_stats: OdeStats,
    pub surface_events: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    /// "survives", "ruled out by <condition>", "ruled out" or "inconclusive".
    pub verdict: String,
    pub normal: Vec<CandidateReport>,
    pub abnormal: Vec<CandidateReport>,
    /// Some abnormal multiplier satisfies every condition.
    pub abnormal_survivor: bool,
    pub singular_fraction: f64,
    pub provenance: Provenance,
}

impl ConditionReport {
    pub fn any_violation(&self) -> bool {
        self.verdict.starts_with("ruled out")
    }
}

fn aggregate(cands: &[CandidateReport]) -> String {
    if cands.is_empty() || cands.iter().all(|c| c.times.is_empty()) {
        return "inconclusive".into();
    }
    if cands.iter().any(|c| c.survives && c.entries.iter().all(|e| e.verdict == Verdict::Satisfied)) {
        return "survives".into();
    }
    if cands.iter().any(|c| c.survives) {
        return "inconclusive".into();
    }
    for id in CONDITION_IDS {
        if cands.iter().all(|c| c.violated.iter().any(|v| v == id)) {
            return format!("ruled out by {}", condition_name(id));
        }
    }
    "ruled out".into()
}

/// Builds multipliers and evaluates every condition; the verdict is taken
/// over normal candidates whenever there are any.
pub fn run_full_check(problem: &Problem, cfg: &CheckConfig) -> Result<ConditionReport> {
    let traj = problem.trajectory(cfg.ode_tol)?;
    let cands = build_multipliers(problem, &traj, cfg)?;
    let times = time_grid(problem, cfg.grid_points);
    let mut normal = Vec::new();
    let mut abnormal = Vec::new();
    for c in &cands {
        let r = evaluate_candidate(problem, &traj, c, &times, cfg)?;
        if r.normal {
            normal.push(r);
        } else {
            abnormal.push(r);
        }
    }
    let verdict = if !normal.is_empty() { aggregate(&normal) } else { aggregate(&abnormal) };
    let pts = samples(problem, &traj, &times, cfg.singular_margin);
    let singular_fraction = if pts.is_empty() { 0.0 } else { pts.iter().filter(|s| s.singular).count() as f64 / pts.len() as f64 };
    Ok(ConditionReport {
        verdict,
        abnormal_survivor: abnormal.iter().any(|c| c.survives),
        normal,
        abnormal,
        singular_fraction,
        provenance: Provenance {
            seed: cfg.sampling.seed,
            tol: cfg.tol,
            safety: cfg.safety,
            ode_tol: cfg.ode_tol,
            grid_points: cfg.grid_points,
            policy: cfg.policy.tag(),
            trajectory_stats: traj.stats,
            surface_events: traj.events.clone(),
        },
    })
}

/// Checks a hand-made costate (used for fixed-multiplier examples).
pub fn candidate_from_terminal(problem: &Problem, traj: &Trajectory, p: &DVector<f64>, lambda: f64, cfg: &CheckConfig) -> Result<Candidate> {
    let costate = integrate_adjoint(&problem.sys, traj, &problem.process.u, p, lambda, cfg.policy, cfg.ode_tol)?;
    Ok(Candidate { lambda, p_terminal: p.clone(), xi: DVector::zeros(p.len()), normal_coeffs: Vec::new(), costate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::test_systems::{example_system, smooth};
    use crate::system::{Control, ControlBox};
    use nsgoh_expr::parse_expr;

    fn scalar(n: usize, s: &str) -> PiecewiseField {
        let nm: Vec<String> = (1..=n).map(|k| format!("x{k}")).collect();
        PiecewiseField::smooth(n, vec![parse_expr(s, &nm).unwrap()]).unwrap()
    }

    fn example_problem() -> Problem {
        let sys = example_system();
        let process = Process { x0: DVector::from_vec(vec![0.0, 0.0, -4.0]), u: Control::constant(&[0.0], 4.0) };
        let target = TargetSet::HalfSpace { a: vec![0.0, 0.0, 1.0], b: 0.0 };
        Problem::new(sys, process, 4.0, scalar(3, "(x2 - 1)^2"), target).unwrap()
    }

    fn quick() -> CheckConfig {
        CheckConfig { grid_points: 21, ..Default::default() }
    }

    #[test]
    fn example_is_ruled_out_by_lc3() {
        let p = example_problem();
        let rep = run_full_check(&p, &quick()).unwrap();
        assert_eq!(rep.verdict, "ruled out by LC3");
        assert!(rep.abnormal_survivor);
        let c = rep
            .normal
            .iter()
            .find(|c| {
                let s = 1.0 / c.lambda;
                (c.p_terminal[1] * s + 2.0).abs() < 1e-9 && (c.p_terminal[2] * s - 1.0).abs() < 1e-9
            })
            .expect("candidate proportional to (0,-2,1)");
        let r = c.entry("vii").unwrap().max_residual().unwrap() / c.lambda;
        assert!((r - 4.0).abs() < 0.2, "{r}");
        for id in ["i", "ii", "iii", "iv", "v", "vi"] {
            assert_eq!(c.entry(id).unwrap().verdict, Verdict::Satisfied, "{id}");
        }
    }

    #[test]
    fn trivial_cost_and_full_target_has_no_candidate() {
        let sys = example_system();
        let process = Process { x0: DVector::zeros(3), u: Control::constant(&[0.0], 1.0) };
        let p = Problem::new(sys, process, 1.0, scalar(3, "0"), TargetSet::FullSpace).unwrap();
        assert!(matches!(run_full_check(&p, &quick()), Err(CoreError::NoCandidate(_))));
    }

    #[test]
    fn subspace_target_gives_two_abnormal_rays() {
        let sys = example_system();
        let process = Process { x0: DVector::from_vec(vec![0.0, 0.0, -1.0]), u: Control::constant(&[0.0], 1.0) };
        let target = TargetSet::Subspace { a: vec![vec![0.0, 0.0, 1.0]], c: vec![0.0] };
        let p = Problem::new(sys, process, 1.0, scalar(3, "0"), target).unwrap();
        let traj = p.trajectory(1e-12).unwrap();
        let c = build_multipliers(&p, &traj, &quick()).unwrap();
        let abnormal: Vec<&Candidate> = c.iter().filter(|c| !c.is_normal()).collect();
        let dirs: Vec<f64> = abnormal.iter().map(|c| c.p_terminal[2]).collect();
        assert_eq!(abnormal.len(), 2);
        assert!(dirs.contains(&1.0) && dirs.contains(&-1.0));
    }

    #[test]
    fn hamiltonian_gap_is_detected() {
        // x' = u, U = [-1,1], u = 0, p = -1: max p u - 0 = 1
        let sys = ControlAffineSystem::new(PiecewiseField::zero(1), vec![smooth(1, &["1"])], ControlBox::symmetric(1, 1.0)).unwrap();
        let process = Process { x0: DVector::zeros(1), u: Control::constant(&[0.0], 1.0) };
        let p = Problem::new(sys, process, 1.0, scalar(1, "x1"), TargetSet::FullSpace).unwrap();
        let traj = p.trajectory(1e-12).unwrap();
        let cfg = quick();
        let cand = candidate_from_terminal(&p, &traj, &DVector::from_element(1, -1.0), 0.0, &cfg).unwrap();
        let r = evaluate_candidate(&p, &traj, &cand, &time_grid(&p, 5), &cfg).unwrap();
        let e = r.entry("iv").unwrap();
        assert!(e.residuals.iter().all(|v| (v.unwrap() - 1.0).abs() < 1e-12));
        assert_eq!(e.verdict, Verdict::Violated);
    }

    #[test]
    fn heisenberg_goh_violation() {
        let g1 = smooth(3, &["1", "0", "0"]);
        let g2 = smooth(3, &["0", "1", "x1"]);
        let sys = ControlAffineSystem::new(PiecewiseField::zero(3), vec![g1, g2], ControlBox::symmetric(2, 1.0)).unwrap();
        let process = Process { x0: DVector::zeros(3), u: Control::constant(&[0.0, 0.0], 1.0) };
        let p = Problem::new(sys, process, 1.0, scalar(3, "x3"), TargetSet::FullSpace).unwrap();
        let traj = p.trajectory(1e-12).unwrap();
        let cfg = quick();
        let cand = candidate_from_terminal(&p, &traj, &DVector::from_vec(vec![0.0, 0.0, 1.0]), 1.0, &cfg).unwrap();
        let r = evaluate_candidate(&p, &traj, &cand, &time_grid(&p, 5), &cfg).unwrap();
        let e = r.entry("v").unwrap();
        assert!((e.max_residual().unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(e.verdict, Verdict::Violated);
        assert!(r.entry("vii").unwrap().notes[0].starts_with("vacuous"));
    }

    #[test]
    fn empty_grid_is_inconclusive() {
        let p = example_problem();
        let rep = run_full_check(&p, &CheckConfig { grid_points: 0, ..Default::default() }).unwrap();
        assert_eq!(rep.verdict, "inconclusive");
    }
}
