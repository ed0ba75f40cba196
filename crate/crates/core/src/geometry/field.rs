//! Piecewise-analytic vector fields glued along explicit switching surfaces.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use nsgoh_expr::{Condition, Expr, Func, Relation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Points with |s(x)| below this are treated as lying on the surface s = 0.
pub const SURFACE_TOL: f64 = 1e-12;
const GLUE_TOL: f64 = 1e-10;
const MAX_PIECES: usize = 512;

/// Global smoothness class of a field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Regularity {
    #[serde(rename = "C0_1")]
    C01,
    #[serde(rename = "C1_1")]
    C11,
    #[serde(rename = "C2")]
    C2,
}

impl Regularity {
    pub fn name(self) -> &'static str {
        match self {
            Regularity::C01 => "C0_1",
            Regularity::C11 => "C1_1",
            Regularity::C2 => "C2",
        }
    }
}

/// A smooth scalar switching function together with its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Switch {
    pub expr: Expr,
    pub grad: Vec<Expr>,
}

impl Switch {
    fn new(expr: Expr, dim: usize) -> Switch {
        let grad = expr.gradient(dim);
        Switch { expr, grad }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.expr.eval(x)
    }

    pub fn gradient(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.grad.len(), self.grad.iter().map(|g| g.eval(x)))
    }
}

/// Sign requirement on one switch: s > 0, s >= 0, s < 0 or s <= 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SignCond {
    pub switch: usize,
    pub positive: bool,
    pub strict: bool,
}

impl SignCond {
    pub fn holds_value(&self, v: f64) -> bool {
        match (self.positive, self.strict) {
            (true, true) => v > 0.0,
            (true, false) => v >= 0.0,
            (false, true) => v < 0.0,
            (false, false) => v <= 0.0,
        }
    }

    fn violation(&self, v: f64) -> f64 {
        if self.positive {
            (-v).max(0.0)
        } else {
            v.max(0.0)
        }
    }
}

/// One analytic piece: a region given by sign conditions plus the formula
/// valid there.
#[derive(Debug, Clone)]
pub struct Piece {
    pub conds: Vec<SignCond>,
    pub value: Vec<Expr>,
    pub jac: Vec<Vec<Expr>>,
    hess: OnceLock<Vec<Vec<Vec<Expr>>>>,
}

impl Piece {
    fn new(conds: Vec<SignCond>, value: Vec<Expr>, dim: usize) -> Piece {
        let jac = value.iter().map(|e| e.gradient(dim)).collect();
        Piece { conds, value, jac, hess: OnceLock::new() }
    }

    pub fn eval(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.value.len(), self.value.iter().map(|e| e.eval(x)))
    }

    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let rows = self.jac.len();
        let cols = x.len();
        DMatrix::from_fn(rows, cols, |r, c| self.jac[r][c].eval(x))
    }

    /// Second derivatives, one n x n matrix per output component.
    pub fn hessian(&self, x: &[f64]) -> Vec<DMatrix<f64>> {
        let n = x.len();
        let h = self.hess.get_or_init(|| {
            self.jac.iter().map(|row| row.iter().map(|e| e.gradient(n)).collect()).collect()
        });
        h.iter().map(|comp| DMatrix::from_fn(n, n, |a, b| comp[a][b].eval(x))).collect()
    }
}

/// Vector field (or scalar map when `out_dim == 1`) on R^n made of analytic
/// pieces.
#[derive(Debug, Clone)]
pub struct PiecewiseField {
    pub dim: usize,
    pub out_dim: usize,
    pub switches: Vec<Switch>,
    pub pieces: Vec<Piece>,
    pub regularity: Regularity,
}

/// Result of sampling a field along its switching surfaces. Jumps are
/// relative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlueReport {
    pub surface_points: usize,
    pub max_value_jump: f64,
    pub max_jacobian_jump: f64,
    pub max_hessian_jump: f64,
}

impl PiecewiseField {
    /// Single-piece field from one formula per component.
    pub fn smooth(dim: usize, value: Vec<Expr>) -> Result<PiecewiseField> {
        PiecewiseField::from_pieces(dim, value.len(), vec![(Vec::new(), value)], None)
    }

    pub fn constant(values: &[f64]) -> PiecewiseField {
        let exprs = values.iter().map(|&v| Expr::Num(v)).collect();
        PiecewiseField::smooth(values.len(), exprs).expect("constant field")
    }

    pub fn zero(dim: usize) -> PiecewiseField {
        PiecewiseField::constant(&vec![0.0; dim])
    }

    /// Coordinate field d/dx^k.
    pub fn coordinate(dim: usize, k: usize) -> PiecewiseField {
        let mut v = vec![0.0; dim];
        v[k] = 1.0;
        PiecewiseField::constant(&v)
    }

    /// Builds a field from `(region conditions, value formulas)` pairs.
    ///
    /// `abs(..)` occurrences are expanded into explicit pieces. When
    /// `declared` is `None` the regularity is inferred from the glue report,
    /// otherwise the declaration is validated against it.
    pub fn from_pieces(
        dim: usize,
        out_dim: usize,
        raw: Vec<(Vec<Condition>, Vec<Expr>)>,
        declared: Option<Regularity>,
    ) -> Result<PiecewiseField> {
        if raw.is_empty() {
            return Err(CoreError::InvalidField("no pieces".into()));
        }
        let mut switches: Vec<Switch> = Vec::new();
        let mut pieces = Vec::new();
        for (conds, value) in raw {
            if value.len() != out_dim {
                return Err(CoreError::DimensionError(format!(
                    "piece has {} components, expected {}",
                    value.len(),
                    out_dim
                )));
            }
            let mut sc = Vec::new();
            for c in &conds {
                if c.expr.arity() > dim {
                    return Err(CoreError::DimensionError("condition uses an undeclared variable".into()));
                }
                let positive = matches!(c.relation, Relation::Greater | Relation::GreaterEq);
                let strict = matches!(c.relation, Relation::Greater | Relation::Less);
                let cond = intern_switch(&mut switches, &c.expr, dim, positive, strict);
                match merge_cond(&sc, cond) {
                    Some(next) => sc = next,
                    None => return Err(CoreError::InvalidField("piece region is empty".into())),
                }
            }
            for e in &value {
                if e.arity() > dim {
                    return Err(CoreError::DimensionError("formula uses an undeclared variable".into()));
                }
                if e.contains_func(Func::Sign) {
                    return Err(CoreError::InvalidField("sign() makes the field discontinuous".into()));
                }
            }
            expand_abs(&mut switches, &mut pieces, sc, value, dim)?;
        }
        let mut field = PiecewiseField { dim, out_dim, switches, pieces, regularity: Regularity::C2 };
        field.check_partition()?;
        let report = field.glue_report(0);
        if report.max_value_jump > GLUE_TOL {
            return Err(CoreError::InvalidField(format!(
                "values of adjacent pieces differ by {:.3e} on a switching surface",
                report.max_value_jump
            )));
        }
        let inferred = if field.pieces.len() == 1 {
            Regularity::C2
        } else if report.max_jacobian_jump > GLUE_TOL {
            Regularity::C01
        } else if report.max_hessian_jump > GLUE_TOL {
            Regularity::C11
        } else {
            Regularity::C2
        };
        field.regularity = match declared {
            None => inferred,
            Some(d) if d <= inferred => d,
            Some(d) => {
                return Err(CoreError::RegularityError(format!(
                    "declared {} but adjacent pieces only glue as {}",
                    d.name(),
                    inferred.name()
                )))
            }
        };
        Ok(field)
    }

    pub fn is_single_piece(&self) -> bool {
        self.pieces.len() == 1
    }

    pub fn switch_values(&self, x: &[f64]) -> Vec<f64> {
        self.switches.iter().map(|s| s.eval(x)).collect()
    }

    /// Index of the piece whose conditions hold at `x`; on ties the first,
    /// and when none holds (strict conditions on a surface) the least
    /// violated one.
    pub fn piece_at(&self, x: &[f64]) -> usize {
        let sv = self.switch_values(x);
        self.piece_for_values(&sv)
    }

    pub fn piece_for_values(&self, sv: &[f64]) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (k, p) in self.pieces.iter().enumerate() {
            let mut viol = 0.0;
            let mut ok = true;
            for c in &p.conds {
                let v = sv[c.switch];
                if !c.holds_value(v) {
                    ok = false;
                    viol += c.violation(v);
                }
            }
            if ok {
                return k;
            }
            if viol < best.0 {
                best = (viol, k);
            }
        }
        best.1
    }

    /// Piece index at `x` if `x` is off every switching surface.
    pub fn piece_strict(&self, x: &[f64]) -> Option<usize> {
        let sv = self.switch_values(x);
        if sv.iter().any(|v| v.abs() <= SURFACE_TOL) {
            return None;
        }
        Some(self.piece_for_values(&sv))
    }

    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        self.pieces[self.piece_at(x.as_slice())].eval(x.as_slice())
    }

    pub fn eval_piece(&self, k: usize, x: &DVector<f64>) -> DVector<f64> {
        self.pieces[k].eval(x.as_slice())
    }

    pub fn jacobian_piece(&self, k: usize, x: &DVector<f64>) -> DMatrix<f64> {
        self.pieces[k].jacobian(x.as_slice())
    }

    /// Switches whose surface passes through `x`.
    pub fn active_switches(&self, x: &[f64]) -> Vec<usize> {
        (0..self.switches.len()).filter(|&k| self.switches[k].eval(x).abs() <= SURFACE_TOL).collect()
    }

    /// Jacobian at `x`; on a switching surface it is returned only if every
    /// adjacent piece produces the same matrix.
    pub fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let xs = x.as_slice();
        if self.active_switches(xs).is_empty() {
            return Ok(self.pieces[self.piece_at(xs)].jacobian(xs));
        }
        let adj = self.adjacent_pieces(x, 1e-7);
        let mut mats = adj.iter().map(|&k| self.pieces[k].jacobian(xs));
        let first = match mats.next() {
            Some(m) => m,
            None => return Ok(self.pieces[self.piece_at(xs)].jacobian(xs)),
        };
        let tol = GLUE_TOL * (1.0 + first.amax());
        for m in mats {
            if (&m - &first).amax() > tol {
                return Err(CoreError::NotDifferentiable(xs.to_vec()));
            }
        }
        Ok(first)
    }

    /// Deterministic probe points around `x` at distance `r`, one per sign
    /// pattern of the nearby switches plus coordinate directions.
    pub fn probes(&self, x: &DVector<f64>, r: f64) -> Vec<DVector<f64>> {
        let n = self.dim;
        let xs = x.as_slice();
        let mut normals = Vec::new();
        for s in &self.switches {
            let v = s.eval(xs);
            let g = s.gradient(xs);
            let gn = g.norm();
            if gn > 0.0 && v.abs() <= 2.0 * r * gn {
                normals.push(g / gn);
            } else if gn == 0.0 && v.abs() <= SURFACE_TOL {
                normals.push(DVector::zeros(n));
            }
        }
        let mut out = vec![x.clone()];
        let k = normals.len().min(8);
        for mask in 0..(1usize << k) {
            let mut d = DVector::zeros(n);
            for (b, nv) in normals.iter().take(k).enumerate() {
                let sgn = if mask & (1 << b) != 0 { 1.0 } else { -1.0 };
                d += nv * sgn;
            }
            let dn = d.norm();
            if dn > 1e-9 {
                out.push(x + d * (r / dn));
            }
        }
        for nv in normals.iter() {
            out.push(x + nv * r);
            out.push(x - nv * r);
        }
        if !normals.is_empty() {
            for i in 0..n {
                for sgn in [1.0, -1.0] {
                    let mut d = DVector::zeros(n);
                    d[i] = sgn * r;
                    out.push(x + d);
                }
                for j in (i + 1)..n {
                    for (si, sj) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                        let mut d = DVector::zeros(n);
                        d[i] = si;
                        d[j] = sj;
                        out.push(x + d * (r / 2f64.sqrt()));
                    }
                }
            }
        }
        out
    }

    /// Pieces realised at probe points within distance `r` of `x`.
    pub fn adjacent_pieces(&self, x: &DVector<f64>, r: f64) -> Vec<usize> {
        let mut out = Vec::new();
        for p in self.probes(x, r) {
            if let Some(k) = self.piece_strict(p.as_slice()) {
                if !out.contains(&k) {
                    out.push(k);
                }
            }
        }
        if out.is_empty() {
            out.push(self.piece_at(x.as_slice()));
        }
        out.sort_unstable();
        out
    }

    /// Piecewise classical bracket [X,Y] = DY·X − DX·Y, formed per pair of
    /// overlapping pieces.
    pub fn bracket(x: &PiecewiseField, y: &PiecewiseField) -> Result<PiecewiseField> {
        if x.dim != y.dim || x.out_dim != x.dim || y.out_dim != y.dim {
            return Err(CoreError::DimensionError("bracket needs vector fields of equal dimension".into()));
        }
        let n = x.dim;
        let mut switches = x.switches.clone();
        let remap: Vec<(usize, bool)> = y
            .switches
            .iter()
            .map(|s| {
                let c = intern_switch(&mut switches, &s.expr, n, true, true);
                (c.switch, c.positive)
            })
            .collect();
        let mut pieces = Vec::new();
        for px in &x.pieces {
            for py in &y.pieces {
                let mut conds = px.conds.clone();
                let mut ok = true;
                for c in &py.conds {
                    let (sw, same) = remap[c.switch];
                    let mapped = SignCond { switch: sw, positive: c.positive == same, strict: c.strict };
                    match merge_cond(&conds, mapped) {
                        Some(next) => conds = next,
                        None => {
                            ok = false;
                            break;
                        }
                    }
                }
                if !ok {
                    continue;
                }
                let value = (0..n)
                    .map(|r| {
                        let mut acc = Expr::zero();
                        for c in 0..n {
                            acc = Expr::add(acc, Expr::mul(py.jac[r][c].clone(), px.value[c].clone()));
                            acc = Expr::sub(acc, Expr::mul(px.jac[r][c].clone(), py.value[c].clone()));
                        }
                        acc
                    })
                    .collect();
                pieces.push(Piece::new(conds, value, n));
            }
        }
        let regularity = if pieces.len() == 1 && x.regularity == Regularity::C2 && y.regularity == Regularity::C2 {
            Regularity::C2
        } else {
            Regularity::C01
        };
        Ok(PiecewiseField { dim: n, out_dim: n, switches, pieces, regularity })
    }

    fn check_partition(&self) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(0x9a27);
        for _ in 0..256 {
            let x: Vec<f64> = (0..self.dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let sv = self.switch_values(&x);
            if sv.iter().any(|v| v.abs() <= 1e-9 || !v.is_finite()) {
                continue;
            }
            let hits = self.pieces.iter().filter(|p| p.conds.iter().all(|c| c.holds_value(sv[c.switch]))).count();
            if hits == 0 {
                return Err(CoreError::InvalidField(format!("no piece covers {:?}", x)));
            }
            if hits > 1 {
                return Err(CoreError::InvalidField(format!("pieces overlap at {:?}", x)));
            }
        }
        Ok(())
    }

    /// Samples points on every switching surface and measures the jumps of
    /// values, Jacobians and Hessians between the pieces on either side.
    pub fn glue_report(&self, seed: u64) -> GlueReport {
        let mut rep = GlueReport { surface_points: 0, max_value_jump: 0.0, max_jacobian_jump: 0.0, max_hessian_jump: 0.0 };
        if self.pieces.len() < 2 {
            return rep;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x61ce ^ seed);
        for sw in &self.switches {
            for _ in 0..24 {
                let mut y = DVector::from_fn(self.dim, |_, _| rng.gen_range(-2.0..2.0));
                let mut on = false;
                for _ in 0..50 {
                    let v = sw.eval(y.as_slice());
                    let g = sw.gradient(y.as_slice());
                    let g2 = g.norm_squared();
                    if !v.is_finite() || g2 < 1e-24 {
                        break;
                    }
                    if v.abs() <= 1e-14 {
                        on = true;
                        break;
                    }
                    y -= g * (v / g2);
                }
                if !on {
                    continue;
                }
                let g = sw.gradient(y.as_slice());
                let nrm = g.clone() / g.norm();
                let delta = 1e-6;
                let (a, b) = match (
                    self.piece_strict((&y + &nrm * delta).as_slice()),
                    self.piece_strict((&y - &nrm * delta).as_slice()),
                ) {
                    (Some(a), Some(b)) => (a, b),
                    _ => continue,
                };
                rep.surface_points += 1;
                if a == b {
                    continue;
                }
                let ys = y.as_slice();
                let (pa, pb) = (&self.pieces[a], &self.pieces[b]);
                // jumps are relative to the local magnitude of each quantity
                let (va, ja) = (pa.eval(ys), pa.jacobian(ys));
                let dv = (&va - pb.eval(ys)).amax() / (1.0 + va.amax());
                let dj = (&ja - pb.jacobian(ys)).amax() / (1.0 + ja.amax());
                let dh = pa
                    .hessian(ys)
                    .iter()
                    .zip(pb.hessian(ys).iter())
                    .map(|(u, v)| (u - v).amax() / (1.0 + u.amax()))
                    .fold(0.0, f64::max);
                rep.max_value_jump = rep.max_value_jump.max(dv);
                rep.max_jacobian_jump = rep.max_jacobian_jump.max(dj);
                rep.max_hessian_jump = rep.max_hessian_jump.max(dh);
            }
        }
        rep
    }
}

fn intern_switch(switches: &mut Vec<Switch>, expr: &Expr, dim: usize, positive: bool, strict: bool) -> SignCond {
    if let Some(k) = switches.iter().position(|s| &s.expr == expr) {
        return SignCond { switch: k, positive, strict };
    }
    let negated = Expr::neg(expr.clone());
    if let Some(k) = switches.iter().position(|s| s.expr == negated) {
        return SignCond { switch: k, positive: !positive, strict };
    }
    switches.push(Switch::new(expr.clone(), dim));
    SignCond { switch: switches.len() - 1, positive, strict }
}

/// Adds a condition to a region; `None` when the region collapses onto a
/// surface or becomes empty.
fn merge_cond(conds: &[SignCond], c: SignCond) -> Option<Vec<SignCond>> {
    let mut out = conds.to_vec();
    if let Some(prev) = out.iter_mut().find(|p| p.switch == c.switch) {
        if prev.positive != c.positive {
            return None;
        }
        prev.strict |= c.strict;
    } else {
        out.push(c);
    }
    Some(out)
}

fn innermost_abs(e: &Expr) -> Option<Expr> {
    e.abs_arguments().into_iter().find(|a| !a.contains_func(Func::Abs))
}

fn expand_abs(
    switches: &mut Vec<Switch>,
    pieces: &mut Vec<Piece>,
    conds: Vec<SignCond>,
    value: Vec<Expr>,
    dim: usize,
) -> Result<()> {
    let mut stack = vec![(conds, value)];
    while let Some((conds, value)) = stack.pop() {
        let arg = value.iter().find_map(innermost_abs);
        let arg = match arg {
            None => {
                if pieces.len() >= MAX_PIECES {
                    return Err(CoreError::InvalidField("too many pieces after abs expansion".into()));
                }
                pieces.push(Piece::new(conds, value, dim));
                continue;
            }
            Some(a) => a,
        };
        for nonneg in [true, false] {
            let c = intern_switch(switches, &arg, dim, nonneg, !nonneg);
            let next = match merge_cond(&conds, c) {
                Some(n) => n,
                None => continue,
            };
            let resolved: Vec<Expr> =
                value.iter().map(|e| e.resolve_abs(&|a: &Expr| if a == &arg { Some(nonneg) } else { None })).collect();
            stack.push((next, resolved));
        }
    }
    Ok(())
}
