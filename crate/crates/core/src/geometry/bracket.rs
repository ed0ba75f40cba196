//! Classical, set-valued and iterated set-valued Lie brackets, and Clarke
//! generalized Jacobians.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::field::{PiecewiseField, Regularity};
use super::hull::{flatten, Hull};
use super::sampling::{sample_ball, SamplingConfig};
use crate::error::{CoreError, Result};

/// DY(x)·X(x) − DX(x)·Y(x).
pub fn classical_bracket(x: &PiecewiseField, y: &PiecewiseField, p: &DVector<f64>) -> Result<DVector<f64>> {
    let dx = x.jacobian(p)?;
    let dy = y.jacobian(p)?;
    Ok(dy * x.eval(p) - dx * y.eval(p))
}

/// Per-radius sampling summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelStat {
    pub radius: f64,
    pub accepted: usize,
    pub rejected: usize,
    pub diameter: f64,
}

/// Hull estimate of a set-valued quantity at a point.
#[derive(Debug, Clone)]
pub struct SetEstimate {
    /// Finest-level samples plus one-sided limits of the adjacent pieces.
    pub hull: Hull,
    /// Hull of the adjacent-piece limits alone.
    pub limits: Hull,
    pub levels: Vec<LevelStat>,
}

/// Set-valued evaluation of a piecewise field: the hull of limits of its
/// values at nearby points off the switching surfaces.
#[derive(Debug, Clone)]
pub struct SetValuedField {
    pub field: PiecewiseField,
}

fn probe_radius(cfg: &SamplingConfig) -> f64 {
    (cfg.finest_radius() * 1e-2).max(1e-9)
}

fn estimate<R, S>(x: &DVector<f64>, cfg: &SamplingConfig, mut sample: S, limits: R) -> Result<SetEstimate>
where
    S: FnMut(&mut ChaCha8Rng, f64) -> (Option<DVector<f64>>, Vec<usize>),
    R: Fn(&[usize]) -> Vec<DVector<f64>>,
{
    let _ = x;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut levels = Vec::new();
    let mut total_ok = 0;
    let mut finest: Vec<DVector<f64>> = Vec::new();
    let mut seen: Vec<usize> = Vec::new();
    let fr = cfg.finest_radius();
    for &r in &cfg.radii {
        let mut pts = Vec::new();
        let mut rejected = 0;
        for _ in 0..cfg.samples_per_level {
            let (v, tags) = sample(&mut rng, r);
            match v {
                Some(v) => {
                    pts.push(v);
                    if r == fr {
                        for t in tags {
                            if !seen.contains(&t) {
                                seen.push(t);
                            }
                        }
                    }
                }
                None => rejected += 1,
            }
        }
        total_ok += pts.len();
        let diameter = if pts.is_empty() { 0.0 } else { Hull::new(pts.clone())?.diameter() };
        levels.push(LevelStat { radius: r, accepted: pts.len(), rejected, diameter });
        if r == fr {
            finest = pts;
        }
    }
    if total_ok == 0 && !cfg.radii.is_empty() {
        return Err(CoreError::DegenerateSampling);
    }
    let lims = limits(&seen);
    let limits_hull = Hull::new(lims.clone())?;
    finest.extend(lims);
    Ok(SetEstimate { hull: Hull::new(finest)?, limits: limits_hull, levels })
}

impl SetValuedField {
    pub fn new(field: PiecewiseField) -> SetValuedField {
        SetValuedField { field }
    }

    pub fn at(&self, x: &DVector<f64>, cfg: &SamplingConfig) -> Result<SetEstimate> {
        let f = &self.field;
        let adj = f.adjacent_pieces(x, probe_radius(cfg));
        estimate(
            x,
            cfg,
            |rng, r| {
                let y = sample_ball(rng, x, r);
                match f.piece_strict(y.as_slice()) {
                    Some(k) => (Some(f.eval_piece(k, &y)), vec![k]),
                    None => (None, vec![]),
                }
            },
            |seen| {
                let mut ks = adj.clone();
                ks.extend(seen.iter().cloned());
                ks.sort_unstable();
                ks.dedup();
                ks.iter().map(|&k| f.eval_piece(k, x)).collect()
            },
        )
    }

    /// Hull of the one-sided limits only (no random sampling).
    pub fn limits(&self, x: &DVector<f64>, probe: f64) -> Hull {
        let f = &self.field;
        let vs = f.adjacent_pieces(x, probe).into_iter().map(|k| f.eval_piece(k, x)).collect();
        Hull::new(vs).expect("at least one adjacent piece")
    }
}

/// [X,Y]_set(x).
pub fn set_valued_bracket(
    x: &PiecewiseField,
    y: &PiecewiseField,
    p: &DVector<f64>,
    cfg: &SamplingConfig,
) -> Result<SetEstimate> {
    SetValuedField::new(PiecewiseField::bracket(x, y)?).at(p, cfg)
}

/// [Z,[X,Y]]_set with independent sample pairs for [X,Y] and Z.
#[derive(Debug, Clone)]
pub struct Bracket3Field {
    pub inner: PiecewiseField,
    pub z: PiecewiseField,
}

impl Bracket3Field {
    pub fn new(z: &PiecewiseField, x: &PiecewiseField, y: &PiecewiseField) -> Result<Bracket3Field> {
        for (name, f) in [("X", x), ("Y", y)] {
            if f.regularity < Regularity::C11 {
                return Err(CoreError::RegularityError(format!(
                    "{name} must be C1_1 for a length-3 bracket, found {}",
                    f.regularity.name()
                )));
            }
        }
        Ok(Bracket3Field { inner: PiecewiseField::bracket(x, y)?, z: z.clone() })
    }

    /// D[X,Y]_a(p)·Z_b(q) − DZ_b(q)·[X,Y]_a(p).
    fn value(&self, a: usize, p: &DVector<f64>, b: usize, q: &DVector<f64>) -> DVector<f64> {
        let w = &self.inner;
        let dw = w.jacobian_piece(a, p);
        let wv = w.eval_piece(a, p);
        let zv = self.z.eval_piece(b, q);
        let dz = self.z.jacobian_piece(b, q);
        dw * zv - dz * wv
    }

    pub fn at(&self, x: &DVector<f64>, cfg: &SamplingConfig) -> Result<SetEstimate> {
        let pr = probe_radius(cfg);
        let adj_w = self.inner.adjacent_pieces(x, pr);
        let adj_z = self.z.adjacent_pieces(x, pr);
        let nw = self.inner.pieces.len();
        estimate(
            x,
            cfg,
            |rng, r| {
                let p = sample_ball(rng, x, r);
                let q = sample_ball(rng, x, r);
                match (self.inner.piece_strict(p.as_slice()), self.z.piece_strict(q.as_slice())) {
                    (Some(a), Some(b)) => (Some(self.value(a, &p, b, &q)), vec![a, nw + b]),
                    _ => (None, vec![]),
                }
            },
            |seen| {
                let mut aw = adj_w.clone();
                let mut az = adj_z.clone();
                for &t in seen {
                    if t < nw {
                        aw.push(t);
                    } else {
                        az.push(t - nw);
                    }
                }
                aw.sort_unstable();
                aw.dedup();
                az.sort_unstable();
                az.dedup();
                let mut out = Vec::new();
                for &a in &aw {
                    for &b in &az {
                        out.push(self.value(a, x, b, x));
                    }
                }
                out
            },
        )
    }
}

pub fn set_valued_bracket3(
    z: &PiecewiseField,
    x: &PiecewiseField,
    y: &PiecewiseField,
    p: &DVector<f64>,
    cfg: &SamplingConfig,
) -> Result<SetEstimate> {
    Bracket3Field::new(z, x, y)?.at(p, cfg)
}

/// Clarke generalized Jacobian as a hull of flattened (row-major) matrices.
pub fn clarke_jacobian(f: &PiecewiseField, x: &DVector<f64>, cfg: &SamplingConfig) -> Result<SetEstimate> {
    let adj = f.adjacent_pieces(x, probe_radius(cfg));
    estimate(
        x,
        cfg,
        |rng, r| {
            let y = sample_ball(rng, x, r);
            match f.piece_strict(y.as_slice()) {
                Some(k) => (Some(flatten(&f.jacobian_piece(k, &y))), vec![k]),
                None => (None, vec![]),
            }
        },
        |seen| {
            let mut ks = adj.clone();
            ks.extend(seen.iter().cloned());
            ks.sort_unstable();
            ks.dedup();
            ks.iter().map(|&k| flatten(&f.jacobian_piece(k, x))).collect()
        },
    )
}

/// Jacobians of the adjacent pieces at `x` (the vertices of the exact
/// Clarke hull for fields with transversal switching surfaces).
pub fn clarke_vertices(f: &PiecewiseField, x: &DVector<f64>, probe: f64) -> Vec<DMatrix<f64>> {
    let mut out: Vec<DMatrix<f64>> = Vec::new();
    for k in f.adjacent_pieces(x, probe) {
        let j = f.jacobian_piece(k, x);
        if !out.iter().any(|m| (m - &j).amax() <= 1e-14 * (1.0 + j.amax())) {
            out.push(j);
        }
    }
    out
}
