//! Needle, Goh, step-2 and step-3 control variations, their composition,
//! and the reflected-window profiles used for coefficient identities.

use nalgebra::DVector;
use nsgoh_expr::Expr;
use serde::{Deserialize, Serialize};

use crate::asymptotic::fit::{fit_power, noise_floor, PowerFit};
use crate::error::{CoreError, Result};
use crate::poly::{build_goh_family, tilde_p, GohPolyFamily, RatPoly, ScaledPoly, DEFAULT_DEGREE_CAP};
use crate::system::{box_exit, integrate_trajectory, Channel, Control, ControlAffineSystem, ControlPiece};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VariationKind {
    Needle { value: Vec<f64> },
    /// 1 <= j < i <= m.
    Goh { j: usize, i: usize },
    /// Step-2 variation for the pair (0, i).
    Lc2 { i: usize },
    /// Step-3 variation, m = 1 only.
    Lc3,
}

impl VariationKind {
    pub fn name(&self) -> &'static str {
        match self {
            VariationKind::Needle { .. } => "needle",
            VariationKind::Goh { .. } => "goh",
            VariationKind::Lc2 { .. } => "lc2",
            VariationKind::Lc3 => "lc3",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariationGenerator {
    pub kind: VariationKind,
    pub anchor: f64,
    pub alpha: f64,
    pub m: usize,
    /// P^1..P^m for Goh/step-2 kinds, [P~] for step-3, empty for needles.
    pub polys: Vec<RatPoly>,
    pub family: Option<GohPolyFamily>,
}

impl VariationGenerator {
    pub fn new(kind: VariationKind, anchor: f64, alpha: f64, m: usize) -> Result<VariationGenerator> {
        if !(alpha >= 0.0) {
            return Err(CoreError::KindError(format!("amplitude must be nonnegative, got {alpha}")));
        }
        let (polys, family) = match &kind {
            VariationKind::Needle { value } => {
                if value.len() != m {
                    return Err(CoreError::DimensionError(format!(
                        "needle value has {} entries, expected {m}",
                        value.len()
                    )));
                }
                (Vec::new(), None)
            }
            VariationKind::Goh { j, i } => {
                if *j == 0 {
                    return Err(CoreError::KindError("Goh variations need 1 <= j < i; use lc2 for j = 0".into()));
                }
                let fam = build_goh_family(m, *j, *i, DEFAULT_DEGREE_CAP)?;
                (fam.polys.clone(), Some(fam))
            }
            VariationKind::Lc2 { i } => {
                let fam = build_goh_family(m, 0, *i, DEFAULT_DEGREE_CAP)?;
                (fam.polys.clone(), Some(fam))
            }
            VariationKind::Lc3 => {
                if m != 1 {
                    return Err(CoreError::KindError(format!("step-3 variations need m = 1, got m = {m}")));
                }
                (vec![tilde_p()], None)
            }
        };
        Ok(VariationGenerator { kind, anchor, alpha, m, polys, family })
    }

    pub fn with_alpha(&self, alpha: f64) -> VariationGenerator {
        VariationGenerator { alpha, ..self.clone() }
    }

    /// Window length for parameter eps: eps, sqrt(eps) or cbrt(eps).
    pub fn window(&self, eps: f64) -> f64 {
        match self.kind {
            VariationKind::Needle { .. } => eps,
            VariationKind::Goh { .. } | VariationKind::Lc2 { .. } => eps.sqrt(),
            VariationKind::Lc3 => eps.cbrt(),
        }
    }

    fn check_support(&self, eps: f64) -> Result<f64> {
        let w = self.window(eps);
        let bad = match self.kind {
            VariationKind::Needle { .. } => !(eps > 0.0) || w >= self.anchor,
            _ => !(eps > 0.0) || w > self.anchor,
        };
        if bad {
            return Err(CoreError::SupportError(format!(
                "window of length {w} does not fit before the anchor {}",
                self.anchor
            )));
        }
        Ok(w)
    }

    /// Per-channel perturbation alpha * dP^r/dt((t - t_bar)/w + 1) on the
    /// window [t_bar - w, t_bar].
    pub fn perturbation(&self, w: f64) -> Vec<ScaledPoly> {
        let t0 = self.anchor - w;
        let to_local = |p: &RatPoly| {
            let c: Vec<f64> = p.derivative().to_f64().iter().map(|v| v * self.alpha).collect();
            ScaledPoly::new(t0, w, c)
        };
        match self.kind {
            VariationKind::Needle { .. } => Vec::new(),
            _ => self.polys.iter().map(to_local).collect(),
        }
    }

    /// max |dP/dt| over the family on [0, 1].
    pub fn derivative_bound(&self) -> f64 {
        self.polys
            .iter()
            .map(|p| {
                let d = p.derivative();
                (0..=1000).map(|k| d.eval_f64(k as f64 / 1000.0).abs()).fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    pub fn apply(&self, u: &Control, eps: f64) -> Result<Control> {
        if u.m != self.m {
            return Err(CoreError::DimensionError(format!("control has {} channels, generator expects {}", u.m, self.m)));
        }
        if self.anchor > u.horizon() {
            return Err(CoreError::SupportError(format!("anchor {} beyond the horizon {}", self.anchor, u.horizon())));
        }
        let w = self.check_support(eps)?;
        let a = self.anchor - w;
        Ok(match &self.kind {
            VariationKind::Needle { value } => u.set_on_window(a, self.anchor, value),
            _ => {
                if self.alpha == 0.0 {
                    return Ok(u.clone());
                }
                u.add_on_window(a, self.anchor, &self.perturbation(w))
            }
        })
    }
}

/// Applies the generators in list order (the first entry is the innermost
/// operator), so later windows override earlier needles.
pub fn compose(u: &Control, gens: &[(VariationGenerator, f64)]) -> Result<Control> {
    let mut out = u.clone();
    for (g, eps) in gens {
        if *eps == 0.0 {
            continue;
        }
        out = g.apply(&out, *eps)?;
    }
    Ok(out)
}

/// Shifts a piece's channels from absolute time t to s = t - shift.
fn shift_channel(ch: &Channel, shift: f64) -> Channel {
    let poly = ScaledPoly::new(ch.poly.t0 - shift, ch.poly.h, ch.poly.c.clone());
    let expr = ch.expr.as_ref().map(|e| e.substitute(&[Expr::add(Expr::Var(0), Expr::Num(shift))]));
    Channel { poly, expr }
}

/// Channels of s -> -ch(t_bar - s).
fn reflect_channel(ch: &Channel, t_bar: f64, start: f64, len: f64) -> Channel {
    let poly = ch.poly.reflect(0.5 * t_bar, start, len).scale(-1.0);
    let expr = ch
        .expr
        .as_ref()
        .map(|e| Expr::neg(e.substitute(&[Expr::sub(Expr::Num(t_bar), Expr::Var(0))])));
    Channel { poly, expr }
}

/// Profile (a^0, a^1..a^m) on [0, 2w] that flows from x(t_bar) back along
/// `base` for time w and then forward along `varied`:
/// a = -(1, base(t_bar - s)) on [0, w] and (1, varied(t_bar - 2w + s)) on
/// [w, 2w].
pub fn reflected_window_profile(base: &Control, varied: &Control, t_bar: f64, w: f64) -> Result<Control> {
    let m = base.m;
    let lo = t_bar - w;
    let mut pieces = Vec::new();
    let tol = 1e-14 * (1.0 + t_bar.abs());
    let b = base.split_at(lo).split_at(t_bar);
    for p in b.pieces.iter().rev() {
        if p.start < lo - tol || p.end > t_bar + tol {
            continue;
        }
        let (s0, s1) = ((t_bar - p.end).max(0.0), (t_bar - p.start).min(w));
        if s1 <= s0 {
            continue;
        }
        let mut channels = vec![Channel::poly(ScaledPoly::constant(s0, s1 - s0, -1.0))];
        channels.extend(p.channels.iter().map(|c| reflect_channel(c, t_bar, s0, s1 - s0)));
        pieces.push(ControlPiece { start: s0, end: s1, channels });
    }
    let shift = t_bar - 2.0 * w;
    let v = varied.split_at(lo).split_at(t_bar);
    for p in &v.pieces {
        if p.start < lo - tol || p.end > t_bar + tol {
            continue;
        }
        let (s0, s1) = ((p.start - shift).max(w), (p.end - shift).min(2.0 * w));
        if s1 <= s0 {
            continue;
        }
        let mut channels = vec![Channel::poly(ScaledPoly::constant(s0, s1 - s0, 1.0))];
        channels.extend(p.channels.iter().map(|c| shift_channel(c, shift)));
        pieces.push(ControlPiece { start: s0, end: s1, channels });
    }
    // snap tiny gaps left by rounding
    for k in 1..pieces.len() {
        let prev = pieces[k - 1].end;
        pieces[k].start = prev;
    }
    Control::new(m + 1, pieces)
}

/// Endpoint of the system under the reflected-window profile started at
/// `x_bar`; equals x_eps(t_bar) up to integration error.
pub fn profile_endpoint(
    sys: &ControlAffineSystem,
    profile: &Control,
    x_bar: &DVector<f64>,
    tol: f64,
) -> Result<DVector<f64>> {
    let mut g = vec![sys.f.clone()];
    g.extend(sys.g.iter().cloned());
    let zero = crate::geometry::PiecewiseField::zero(sys.n());
    let lifted = ControlAffineSystem::new(zero, g, crate::system::ControlBox {
        lower: vec![f64::NEG_INFINITY; sys.m() + 1],
        upper: vec![f64::INFINITY; sys.m() + 1],
    })?;
    let t = integrate_trajectory(&lifted, profile, x_bar, profile.horizon(), tol)?;
    Ok(t.end_state().clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditivityRow {
    pub scale: f64,
    pub eps: Vec<f64>,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditivityReport {
    pub rows: Vec<AdditivityRow>,
    pub fit: PowerFit,
    pub box_warnings: Vec<String>,
}

/// || x_eps(T) - x_0(T) - sum_i (x_{eps_i e_i}(T) - x_0(T)) || along
/// eps = s * eps_tilde, s over `scales`, with its order in |eps|.
pub fn additivity_check(
    sys: &ControlAffineSystem,
    x0: &DVector<f64>,
    u: &Control,
    gens: &[VariationGenerator],
    eps_tilde: &[f64],
    scales: &[f64],
    tol: f64,
) -> Result<AdditivityReport> {
    if gens.len() != eps_tilde.len() || gens.is_empty() || gens.len() > 4 {
        return Err(CoreError::DimensionError("need 1..=4 generators with one base eps each".into()));
    }
    let t_end = u.horizon();
    let end = |c: &Control| -> Result<DVector<f64>> { Ok(integrate_trajectory(sys, c, x0, t_end, tol)?.end_state().clone()) };
    let x_base = end(u)?;
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for &s in scales {
        let eps: Vec<f64> = eps_tilde.iter().map(|e| e * s).collect();
        let pairs: Vec<(VariationGenerator, f64)> = gens.iter().cloned().zip(eps.iter().cloned()).collect();
        let joint = compose(u, &pairs)?;
        if let Some(ex) = box_exit(&joint, &sys.u_box, 400) {
            warnings.push(format!("scale {s:e}: control leaves U by {ex:.3e}"));
        }
        let mut r = end(&joint)? - &x_base;
        for (g, e) in gens.iter().zip(&eps) {
            let single = g.apply(u, *e)?;
            r -= end(&single)? - &x_base;
        }
        let norm_eps = eps.iter().map(|e| e * e).sum::<f64>().sqrt();
        rows.push(AdditivityRow { scale: norm_eps, eps, residual: r.norm() });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.scale).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.residual).collect();
    let fit = fit_power(&xs, &ys, noise_floor(tol));
    Ok(AdditivityReport { rows, fit, box_warnings: warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::CoefficientTable;

    #[test]
    fn needle_replaces_window() {
        let u = Control::constant(&[0.0], 4.0);
        let g = VariationGenerator::new(VariationKind::Needle { value: vec![1.0] }, 2.0, 1.0, 1).unwrap();
        let v = g.apply(&u, 0.1).unwrap();
        assert_eq!(v.eval(1.95)[0], 1.0);
        assert_eq!(v.eval(1.85)[0], 0.0);
        assert_eq!(v.eval(2.05)[0], 0.0);
        assert!((u.l1_distance(&v) - 0.1).abs() < 1e-13);
        assert!(matches!(g.apply(&u, 2.5), Err(CoreError::SupportError(_))));
    }

    #[test]
    fn goh_perturbation_has_zero_mean_and_right_window() {
        let u = Control::constant(&[0.2, -0.1], 3.0);
        let g = VariationGenerator::new(VariationKind::Goh { j: 1, i: 2 }, 1.5, 0.7, 2).unwrap();
        let eps: f64 = 1e-2;
        let v = g.apply(&u, eps).unwrap();
        for d in g.perturbation(eps.sqrt()) {
            let i = d.antiderivative();
            assert!(i.eval(1.5).abs() < 1e-12);
        }
        assert_eq!(v.eval(1.5 - 0.1 - 1e-9), u.eval(1.5 - 0.1 - 1e-9));
        assert_eq!(v.eval(1.5 + 1e-9), u.eval(1.5 + 1e-9));
        assert_eq!(g.with_alpha(0.0).apply(&u, eps).unwrap(), u);
    }

    #[test]
    fn lc3_requires_scalar_control() {
        assert!(matches!(VariationGenerator::new(VariationKind::Lc3, 1.0, 1.0, 2), Err(CoreError::KindError(_))));
        let g = VariationGenerator::new(VariationKind::Lc3, 1.0, 1.0, 1).unwrap();
        assert!((g.window(1e-3) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn disjoint_needles_commute() {
        let u = Control::constant(&[0.0], 4.0);
        let a = VariationGenerator::new(VariationKind::Needle { value: vec![1.0] }, 1.0, 1.0, 1).unwrap();
        let b = VariationGenerator::new(VariationKind::Needle { value: vec![-0.5] }, 3.0, 1.0, 1).unwrap();
        let ab = compose(&u, &[(a.clone(), 0.1), (b.clone(), 0.2)]).unwrap();
        let ba = compose(&u, &[(b, 0.2), (a, 0.1)]).unwrap();
        for k in 0..1000 {
            let t = 4.0 * k as f64 / 1000.0;
            assert_eq!(ab.eval(t), ba.eval(t));
        }
    }

    #[test]
    fn reflected_goh_profile_coefficients() {
        let u = Control::constant(&[0.0, 0.0], 3.0);
        let g = VariationGenerator::new(VariationKind::Goh { j: 1, i: 2 }, 2.0, 1.0, 2).unwrap();
        let eps = 1e-2;
        let w = g.window(eps);
        let prof = reflected_window_profile(&u, &g.apply(&u, eps).unwrap(), 2.0, w).unwrap();
        let tab = CoefficientTable::new(&prof, 2).unwrap();
        let t = 2.0 * w;
        for h in 0..3 {
            assert!(tab.a(h, t).abs() < 1e-13);
        }
        let fam = g.family.as_ref().unwrap();
        let area = crate::poly::rational::rat_to_f64(&crate::poly::area(fam.poly(1), fam.poly(2)));
        assert!((tab.aa(1, 2, t) - eps * area).abs() < 1e-12);
        assert!((tab.aa(2, 1, t) + eps * area).abs() < 1e-12);
        assert!(tab.aa(0, 1, t).abs() < 1e-13);
    }
}
