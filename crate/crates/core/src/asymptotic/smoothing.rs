//! Mollified systems: increments of x' = f_eta + sum g_eta u compared with
//! set-valued brackets, and bracket/mollification consistency.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::expansion::{default_eps_grid, kind_constant};
use crate::error::{CoreError, Result};
use crate::geometry::mollify::{mollified_bracket, mollified_bracket3, Mollifier};
use crate::geometry::{set_valued_bracket, set_valued_bracket3, Hull, MollifiedField, PiecewiseField, SamplingConfig};
use crate::ode::{integrate, OdeOptions};
use crate::system::{integrate_trajectory, Control, ControlAffineSystem, Process};
use crate::variation::{VariationGenerator, VariationKind};

/// A field as used by the mollified system; single-piece fields are kept.
#[derive(Debug, Clone)]
enum Smoothed {
    Exact(PiecewiseField),
    Mollified(MollifiedField),
}

impl Smoothed {
    fn new(f: &PiecewiseField, eta: f64, nodes: usize) -> Result<Smoothed> {
        if f.is_single_piece() {
            return Ok(Smoothed::Exact(f.clone()));
        }
        let mollifier = Mollifier::new(f.dim, eta, nodes)?;
        Ok(Smoothed::Mollified(MollifiedField { field: f.clone(), mollifier }))
    }

    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Smoothed::Exact(f) => f.eval(x),
            Smoothed::Mollified(f) => f.eval(x),
        }
    }
}

fn simulate_smoothed(f: &Smoothed, g: &[Smoothed], u: &Control, x0: &DVector<f64>, tol: f64) -> Result<DVector<f64>> {
    let opts = OdeOptions::with_tol(tol);
    let mut x = x0.clone();
    for (k, p) in u.pieces.iter().enumerate() {
        let rhs = |t: f64, y: &DVector<f64>| {
            let uv = u.eval_in(k, t);
            let mut v = f.eval(y);
            for (gi, ui) in g.iter().zip(uv.iter()) {
                if *ui != 0.0 {
                    v.axpy(*ui, &gi.eval(y), 1.0);
                }
            }
            v
        };
        x = integrate(rhs, p.start, x, p.end, &opts, |_| None)?.y_end;
    }
    Ok(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MainpropConfig {
    pub eps_grid: Vec<f64>,
    /// eta = eps^eta_exponent.
    pub eta_exponent: f64,
    pub nodes_per_axis: usize,
    pub tol: f64,
    pub sampling: SamplingConfig,
}

impl Default for MainpropConfig {
    fn default() -> Self {
        MainpropConfig {
            eps_grid: default_eps_grid(),
            eta_exponent: 2.0,
            nodes_per_axis: 9,
            tol: 1e-12,
            sampling: SamplingConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MainpropRow {
    pub eps: f64,
    pub eta: f64,
    pub increment: Vec<f64>,
    /// increment / (eps M).
    pub normalized: Vec<f64>,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MainpropReport {
    pub kind: String,
    pub anchor: f64,
    pub alpha: f64,
    pub constant: f64,
    pub hull_vertices: Vec<Vec<f64>>,
    pub rows: Vec<MainpropRow>,
    /// Distance at the finest eps.
    pub final_distance: f64,
    pub converging: bool,
}

fn minkowski(a: &Hull, b: &Hull, s: f64) -> Result<Hull> {
    let mut vs = Vec::new();
    for x in &a.vertices {
        for y in &b.vertices {
            vs.push(x + y * s);
        }
    }
    Hull::new(vs)
}

/// Target hull for the generator at x.
pub fn bracket_hull(
    sys: &ControlAffineSystem,
    gen: &VariationGenerator,
    x: &DVector<f64>,
    u_bar: &DVector<f64>,
    cfg: &SamplingConfig,
) -> Result<Hull> {
    Ok(match &gen.kind {
        VariationKind::Goh { j, i } => set_valued_bracket(&sys.g[j - 1], &sys.g[i - 1], x, cfg)?.hull,
        VariationKind::Lc2 { i } => {
            let gi = &sys.g[i - 1];
            let mut h = set_valued_bracket(&sys.f, gi, x, cfg)?.hull;
            for (k, gk) in sys.g.iter().enumerate() {
                if k + 1 != *i && u_bar[k] != 0.0 {
                    h = minkowski(&h, &set_valued_bracket(gk, gi, x, cfg)?.hull, u_bar[k])?;
                }
            }
            h
        }
        VariationKind::Lc3 => set_valued_bracket3(&sys.g[0], &sys.f, &sys.g[0], x, cfg)?.hull,
        VariationKind::Needle { .. } => return Err(CoreError::KindError("needles have no bracket".into())),
    })
}

/// Normalised increments of the mollified system, eta = eps^exponent,
/// against the set-valued bracket at x(t_bar).
pub fn mainprop_nonsmooth_check(
    sys: &ControlAffineSystem,
    process: &Process,
    gen: &VariationGenerator,
    cfg: &MainpropConfig,
) -> Result<MainpropReport> {
    if cfg.eps_grid.len() < 4 {
        return Err(CoreError::DimensionError("expansion grids need at least 4 points".into()));
    }
    let t_bar = gen.anchor;
    let (m_kind, _, _) = kind_constant(gen)?;
    if m_kind == 0.0 {
        return Err(CoreError::KindError("generator has a vanishing leading constant".into()));
    }
    let xb = integrate_trajectory(sys, &process.u, &process.x0, t_bar, cfg.tol)?.end_state().clone();
    let u_bar = process.u.eval(t_bar - 1e-12 * (1.0 + t_bar));
    let hull = bracket_hull(sys, gen, &xb, &u_bar, &cfg.sampling)?;
    let mut rows = Vec::new();
    for &eps in &cfg.eps_grid {
        let eta = eps.powf(cfg.eta_exponent);
        let w = gen.window(eps);
        let varied = gen.apply(&process.u, eps)?;
        let xs = integrate_trajectory(sys, &process.u, &process.x0, t_bar - w, cfg.tol)?.end_state().clone();
        let f = Smoothed::new(&sys.f, eta, cfg.nodes_per_axis)?;
        let g: Vec<Smoothed> = sys.g.iter().map(|gi| Smoothed::new(gi, eta, cfg.nodes_per_axis)).collect::<Result<_>>()?;
        let base = simulate_smoothed(&f, &g, &process.u.restrict(t_bar - w, t_bar)?, &xs, cfg.tol)?;
        let var = simulate_smoothed(&f, &g, &varied.restrict(t_bar - w, t_bar)?, &xs, cfg.tol)?;
        let d = var - base;
        let v = &d / (eps * m_kind);
        rows.push(MainpropRow {
            eps,
            eta,
            distance: hull.distance(&v),
            increment: d.iter().cloned().collect(),
            normalized: v.iter().cloned().collect(),
        });
    }
    rows.sort_by(|a, b| b.eps.total_cmp(&a.eps));
    let first = rows.first().map(|r| r.distance).unwrap_or(0.0);
    let last = rows.last().map(|r| r.distance).unwrap_or(0.0);
    Ok(MainpropReport {
        kind: gen.kind.name().into(),
        anchor: t_bar,
        alpha: gen.alpha,
        constant: m_kind,
        hull_vertices: hull.vertices.iter().map(|v| v.iter().cloned().collect()).collect(),
        final_distance: last,
        converging: last <= first.max(1e-8),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub eta: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub point: Vec<f64>,
    /// 2 for [X,Y], 3 for [[X,Y],Z].
    pub length: usize,
    pub rows: Vec<ConsistencyRow>,
    /// No increase beyond `noise` along the decreasing eta schedule.
    pub non_increasing: bool,
    pub noise: f64,
}

/// |[X_eta, Y_eta](p) - ([X,Y])_eta(p)|, or the length-3 analogue when `z`
/// is given, over a decreasing eta schedule.
pub fn mollification_consistency(
    x: &PiecewiseField,
    y: &PiecewiseField,
    z: Option<&PiecewiseField>,
    p: &DVector<f64>,
    etas: &[f64],
    noise: f64,
) -> Result<ConsistencyReport> {
    let inner = PiecewiseField::bracket(x, y)?;
    let target = match z {
        Some(z) => PiecewiseField::bracket(&inner, z)?,
        None => inner,
    };
    let mut sorted = etas.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut rows = Vec::new();
    for &eta in &sorted {
        let (xm, ym) = (MollifiedField::new(x.clone(), eta)?, MollifiedField::new(y.clone(), eta)?);
        let lhs = match z {
            Some(z) => mollified_bracket3(&xm, &ym, &MollifiedField::new(z.clone(), eta)?, p),
            None => mollified_bracket(&xm, &ym, p),
        };
        let rhs = MollifiedField::new(target.clone(), eta)?.eval(p);
        rows.push(ConsistencyRow { eta, error: (lhs - rhs).norm() });
    }
    let non_increasing = rows.windows(2).all(|w| w[1].error <= w[0].error + noise);
    Ok(ConsistencyReport {
        point: p.iter().cloned().collect(),
        length: if z.is_some() { 3 } else { 2 },
        rows,
        non_increasing,
        noise,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::test_systems::{example_system, smooth};

    #[test]
    fn smooth_pair_is_consistent_at_every_eta() {
        let x = smooth(2, &["1", "0"]);
        let y = smooth(2, &["0", "x1"]);
        let p = DVector::from_vec(vec![0.3, 0.1]);
        let rep = mollification_consistency(&x, &y, None, &p, &[0.2, 0.1, 0.05], 1e-4).unwrap();
        assert!(rep.rows.iter().all(|r| r.error < 1e-12));
        assert!(rep.non_increasing);
    }

    #[test]
    fn example_lc3_normalised_increment_lands_in_the_segment() {
        let sys = example_system();
        // singular arc x = (0, 0, t - 2) under u = 0
        let process = Process { x0: DVector::from_vec(vec![0.0, 0.0, -2.0]), u: Control::constant(&[0.0], 2.0) };
        let gen = VariationGenerator::new(VariationKind::Lc3, 1.0, 0.5, 1).unwrap();
        let cfg = MainpropConfig { eps_grid: vec![1e-3, 3e-4, 1e-4, 3e-5], ..Default::default() };
        let rep = mainprop_nonsmooth_check(&sys, &process, &gen, &cfg).unwrap();
        assert!(rep.final_distance < 0.1, "{rep:?}");
        let v = &rep.rows.last().unwrap().normalized;
        assert!(v[1] <= -2.0 + 0.1 && v[1] >= -3.0 - 0.1);
    }
}
