//! Piecewise-analytic open-loop controls on [0, T].

use nalgebra::DVector;
use nsgoh_expr::Expr;

use crate::error::{CoreError, Result};
use crate::poly::real::ScaledPoly;

/// One control channel on one piece: a local polynomial plus an optional
/// closed-form expression in absolute time (variable 0).
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub poly: ScaledPoly,
    pub expr: Option<Expr>,
}

impl Channel {
    pub fn poly(p: ScaledPoly) -> Channel {
        Channel { poly: p, expr: None }
    }

    pub fn expr(e: Expr, start: f64, len: f64) -> Channel {
        match e.to_poly(0) {
            // keep polynomial inputs exact in the local basis
            Some(c) => Channel { poly: ScaledPoly::new(0.0, 1.0, c).rebase(start, len), expr: None },
            None => Channel { poly: ScaledPoly::zero(start, len), expr: Some(e) },
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let p = self.poly.eval(t);
        match &self.expr {
            Some(e) => p + e.eval(&[t]),
            None => p,
        }
    }

    pub fn is_polynomial(&self) -> bool {
        self.expr.is_none()
    }

    fn rebase(&self, start: f64, len: f64) -> Channel {
        Channel { poly: self.poly.rebase(start, len), expr: self.expr.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlPiece {
    pub start: f64,
    pub end: f64,
    pub channels: Vec<Channel>,
}

impl ControlPiece {
    pub fn constant(start: f64, end: f64, values: &[f64]) -> ControlPiece {
        let len = end - start;
        ControlPiece {
            start,
            end,
            channels: values.iter().map(|&v| Channel::poly(ScaledPoly::constant(start, len, v))).collect(),
        }
    }

    fn restrict(&self, a: f64, b: f64) -> ControlPiece {
        ControlPiece { start: a, end: b, channels: self.channels.iter().map(|c| c.rebase(a, b - a)).collect() }
    }
}

/// Control on [0, T] with `m` channels, given by contiguous pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct Control {
    pub m: usize,
    pub pieces: Vec<ControlPiece>,
}

impl Control {
    pub fn new(m: usize, pieces: Vec<ControlPiece>) -> Result<Control> {
        if pieces.is_empty() {
            return Err(CoreError::DimensionError("control without pieces".into()));
        }
        for (k, p) in pieces.iter().enumerate() {
            if p.channels.len() != m {
                return Err(CoreError::DimensionError(format!(
                    "control piece {k} has {} channels, expected {m}",
                    p.channels.len()
                )));
            }
            if !(p.end > p.start) {
                return Err(CoreError::DimensionError(format!("control piece {k} has empty interval")));
            }
            if k > 0 && (pieces[k - 1].end - p.start).abs() > 1e-12 * (1.0 + p.start.abs()) {
                return Err(CoreError::DimensionError("control pieces must be contiguous".into()));
            }
        }
        Ok(Control { m, pieces })
    }

    pub fn constant(values: &[f64], horizon: f64) -> Control {
        Control { m: values.len(), pieces: vec![ControlPiece::constant(0.0, horizon, values)] }
    }

    pub fn start(&self) -> f64 {
        self.pieces[0].start
    }

    pub fn horizon(&self) -> f64 {
        self.pieces.last().expect("nonempty").end
    }

    /// Index of the piece containing t (right-continuous, last piece closed).
    pub fn piece_index(&self, t: f64) -> usize {
        let idx = self.pieces.partition_point(|p| p.end <= t);
        idx.min(self.pieces.len() - 1)
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        self.eval_in(self.piece_index(t), t)
    }

    pub fn eval_in(&self, k: usize, t: f64) -> DVector<f64> {
        let p = &self.pieces[k];
        DVector::from_iterator(self.m, p.channels.iter().map(|c| c.eval(t)))
    }

    /// Interior breakpoints plus both ends.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out = vec![self.start()];
        out.extend(self.pieces.iter().map(|p| p.end));
        out
    }

    /// Splits pieces so that `t` is a breakpoint.
    pub fn split_at(&self, t: f64) -> Control {
        let mut out = Vec::with_capacity(self.pieces.len() + 1);
        for p in &self.pieces {
            let tol = 1e-14 * (1.0 + t.abs());
            if t > p.start + tol && t < p.end - tol {
                out.push(p.restrict(p.start, t));
                out.push(p.restrict(t, p.end));
            } else {
                out.push(p.clone());
            }
        }
        Control { m: self.m, pieces: out }
    }

    /// The control restricted to [a, b].
    pub fn restrict(&self, a: f64, b: f64) -> Result<Control> {
        let c = self.split_at(a).split_at(b);
        let tol = 1e-14 * (1.0 + a.abs().max(b.abs()));
        let pieces: Vec<ControlPiece> =
            c.pieces.into_iter().filter(|p| p.start >= a - tol && p.end <= b + tol).collect();
        Control::new(self.m, pieces)
    }

    /// Replaces the control on [a, b] by `f(piece on a sub-window)`.
    pub fn modify_window(&self, a: f64, b: f64, f: impl Fn(&ControlPiece) -> ControlPiece) -> Control {
        let c = self.split_at(a).split_at(b);
        let tol = 1e-14 * (1.0 + b.abs());
        let pieces = c
            .pieces
            .iter()
            .map(|p| if p.start >= a - tol && p.end <= b + tol { f(p) } else { p.clone() })
            .collect();
        Control { m: self.m, pieces }
    }

    /// Adds `delta[r]` (local polynomials) to channel r on [a, b].
    pub fn add_on_window(&self, a: f64, b: f64, delta: &[ScaledPoly]) -> Control {
        self.modify_window(a, b, |p| ControlPiece {
            start: p.start,
            end: p.end,
            channels: p
                .channels
                .iter()
                .zip(delta)
                .map(|(ch, d)| {
                    let d = d.rebase(p.start, p.end - p.start);
                    Channel { poly: ch.poly.add(&d), expr: ch.expr.clone() }
                })
                .collect(),
        })
    }

    /// Sets the control to the constant `value` on [a, b].
    pub fn set_on_window(&self, a: f64, b: f64, value: &[f64]) -> Control {
        self.modify_window(a, b, |p| ControlPiece::constant(p.start, p.end, value))
    }

    /// L^1 distance on [0, T] by 8-point Gauss rules on a common refinement.
    pub fn l1_distance(&self, other: &Control) -> f64 {
        let mut bps: Vec<f64> = self.breakpoints();
        bps.extend(other.breakpoints());
        bps.sort_by(f64::total_cmp);
        bps.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
        let nodes = [
            (-0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
            (-0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
            (-0.525_532_409_916_329, 0.313_706_645_877_887_3),
            (-0.183_434_642_495_649_8, 0.362_683_783_378_362),
            (0.183_434_642_495_649_8, 0.362_683_783_378_362),
            (0.525_532_409_916_329, 0.313_706_645_877_887_3),
            (0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
            (0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
        ];
        let mut total = 0.0;
        for w in bps.windows(2) {
            let (a, b) = (w[0], w[1]);
            for &(x, wt) in &nodes {
                let t = 0.5 * (a + b) + 0.5 * (b - a) * x;
                total += 0.5 * (b - a) * wt * (self.eval(t) - other.eval(t)).abs().sum();
            }
        }
        total
    }
}
