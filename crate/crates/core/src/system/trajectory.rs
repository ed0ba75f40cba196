//! Forward integration with piece locking and switching-surface events.

use std::io::Write;

use nalgebra::DVector;

use super::control::Control;
use super::ControlAffineSystem;
use crate::error::{CoreError, Result};
use crate::geometry::PiecewiseField;
use crate::ode::{bisect_time, integrate, DenseStep, OdeOptions, OdeStats};

/// Switch values beyond this on the wrong side end a locked step.
pub const EVENT_TOL: f64 = 1e-11;
const EVENT_TIME_TOL: f64 = 1e-12;
/// Consecutive events without progress before giving up on locking.
const ZENO_CAP: usize = 20;

#[derive(Debug, Clone)]
pub struct TrajStep {
    pub t0: f64,
    pub t1: f64,
    pub dense: DenseStep,
    /// Locked piece per field (f, g_1, ..); None when stepping unlocked.
    pub mode: Option<Vec<usize>>,
    pub control_piece: usize,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Step end points, starting at the initial time.
    pub mesh: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub steps: Vec<TrajStep>,
    pub events: Vec<f64>,
    /// Control pieces where locking was abandoned after repeated events.
    pub unlocked_pieces: Vec<usize>,
    pub stats: OdeStats,
}

impl Trajectory {
    pub fn start(&self) -> f64 {
        self.mesh[0]
    }

    pub fn end(&self) -> f64 {
        *self.mesh.last().expect("nonempty mesh")
    }

    pub fn end_state(&self) -> &DVector<f64> {
        self.states.last().expect("nonempty")
    }

    fn step_index(&self, t: f64) -> Option<usize> {
        if self.steps.is_empty() {
            return None;
        }
        Some(self.steps.partition_point(|s| s.t1 < t).min(self.steps.len() - 1))
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        match self.step_index(t) {
            None => self.states[0].clone(),
            Some(k) => {
                let s = &self.steps[k];
                if t >= s.t1 {
                    self.states[k + 1].clone()
                } else {
                    s.dense.eval(t.max(s.t0))
                }
            }
        }
    }

    /// Locked mode of the step containing t (the incoming step at mesh
    /// points).
    pub fn mode_at(&self, t: f64) -> Option<&[usize]> {
        self.step_index(t).and_then(|k| self.steps[k].mode.as_deref())
    }

    /// Interior time nodes where the right-hand side may jump: control
    /// breakpoints and events, both ends included.
    pub fn breakpoints(&self, u: &Control) -> Vec<f64> {
        let (a, b) = (self.start(), self.end());
        let mut v: Vec<f64> = u.breakpoints().into_iter().filter(|t| *t > a && *t < b).collect();
        v.extend(self.events.iter().cloned().filter(|t| *t > a && *t < b));
        v.push(a);
        v.push(b);
        v.sort_by(f64::total_cmp);
        v.dedup_by(|x, y| (*x - *y).abs() <= 1e-13 * (1.0 + x.abs()));
        v
    }

    /// CSV with columns t, x1.., and optional extra columns per row.
    pub fn write_csv<W: Write>(
        &self,
        out: &mut W,
        times: &[f64],
        extra: Option<(&[String], &dyn Fn(f64) -> Vec<f64>)>,
    ) -> std::io::Result<()> {
        let n = self.states[0].len();
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|k| format!("x{k}")));
        if let Some((names, _)) = extra {
            header.extend(names.iter().cloned());
        }
        writeln!(out, "{}", header.join(","))?;
        for &t in times {
            let mut row = vec![format!("{t:.12e}")];
            row.extend(self.eval(t).iter().map(|v| format!("{v:.12e}")));
            if let Some((_, f)) = extra {
                row.extend(f(t).iter().map(|v| format!("{v:.12e}")));
            }
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn outside_piece(field: &PiecewiseField, piece: usize, x: &[f64]) -> bool {
    field.pieces[piece].conds.iter().any(|c| {
        let v = field.switches[c.switch].eval(x);
        if c.positive {
            v < -EVENT_TOL
        } else {
            v > EVENT_TOL
        }
    })
}

fn leaves_mode(sys: &ControlAffineSystem, mode: &[usize], x: &[f64]) -> bool {
    sys.fields().zip(mode).any(|(f, &k)| !f.is_single_piece() && outside_piece(f, k, x))
}

/// Pieces for every field at x, looking a short distance ahead along the
/// current velocity when x lies on a switching surface.
pub fn choose_mode(sys: &ControlAffineSystem, x: &DVector<f64>, u: &DVector<f64>) -> Vec<usize> {
    let v = sys.rhs(x, u);
    let speed = v.norm();
    let ahead = if speed > 0.0 {
        let d = 1e-7 * (1.0 + x.norm()) / speed;
        Some(x + v * d)
    } else {
        None
    };
    sys.fields()
        .map(|f| {
            if f.is_single_piece() {
                return 0;
            }
            if let Some(k) = f.piece_strict(x.as_slice()) {
                return k;
            }
            if let Some(y) = &ahead {
                if let Some(k) = f.piece_strict(y.as_slice()) {
                    return k;
                }
            }
            f.piece_at(x.as_slice())
        })
        .collect()
}

/// Integrates the state from `u.start()` to `t_end` with tolerance `tol`.
pub fn integrate_trajectory(
    sys: &ControlAffineSystem,
    u: &Control,
    x0: &DVector<f64>,
    t_end: f64,
    tol: f64,
) -> Result<Trajectory> {
    if x0.len() != sys.n() {
        return Err(CoreError::DimensionError(format!("initial state has dimension {}, expected {}", x0.len(), sys.n())));
    }
    if u.m != sys.m() {
        return Err(CoreError::DimensionError(format!("control has {} channels, expected {}", u.m, sys.m())));
    }
    let opts = OdeOptions::with_tol(tol);
    let t0 = u.start();
    let mut traj = Trajectory {
        mesh: vec![t0],
        states: vec![x0.clone()],
        steps: Vec::new(),
        events: Vec::new(),
        unlocked_pieces: Vec::new(),
        stats: OdeStats::default(),
    };
    let mut x = x0.clone();
    for (k, piece) in u.pieces.iter().enumerate() {
        let a = piece.start.max(t0);
        let b = piece.end.min(t_end);
        if b <= a {
            continue;
        }
        let uk = |t: f64| u.eval_in(k, t);
        let mut t = a;
        let mut stalls = 0;
        let mut locked = true;
        while t < b {
            if !locked {
                let sol = integrate(|s, y| sys.rhs(y, &uk(s)), t, x.clone(), b, &opts, |_| None)?;
                traj.stats.absorb(&sol.stats);
                for st in sol.steps {
                    let t1 = st.t1().min(b);
                    traj.states.push(if t1 >= b { sol.y_end.clone() } else { st.eval(t1) });
                    traj.mesh.push(t1);
                    traj.steps.push(TrajStep { t0: st.t0, t1, dense: st, mode: None, control_piece: k });
                }
                x = sol.y_end;
                break;
            }
            let mode = choose_mode(sys, &x, &uk(t));
            let sol = integrate(
                |s, y| sys.rhs_mode(&mode, y, &uk(s)),
                t,
                x.clone(),
                b,
                &opts,
                |st| {
                    let mut prev = st.t0;
                    for q in [0.25, 0.5, 0.75, 1.0] {
                        let s = st.t0 + q * st.h;
                        if leaves_mode(sys, &mode, st.eval(s).as_slice()) {
                            return Some(bisect_time(prev, s, EVENT_TIME_TOL, |r| {
                                leaves_mode(sys, &mode, st.eval(r).as_slice())
                            }));
                        }
                        prev = s;
                    }
                    None
                },
            )?;
            traj.stats.absorb(&sol.stats);
            let nsteps = sol.steps.len();
            for (idx, st) in sol.steps.into_iter().enumerate() {
                let t1 = if idx + 1 == nsteps { sol.t_end } else { st.t1() };
                let y1 = if idx + 1 == nsteps { sol.y_end.clone() } else { st.eval(t1) };
                traj.mesh.push(t1);
                traj.states.push(y1);
                traj.steps.push(TrajStep { t0: st.t0, t1, dense: st, mode: Some(mode.clone()), control_piece: k });
            }
            let progressed = sol.t_end - t > 10.0 * EVENT_TIME_TOL;
            t = sol.t_end;
            x = sol.y_end;
            if t < b {
                traj.events.push(t);
                stalls = if progressed { 0 } else { stalls + 1 };
                if stalls >= ZENO_CAP {
                    locked = false;
                    traj.unlocked_pieces.push(k);
                }
            }
        }
        if piece.end >= t_end {
            break;
        }
    }
    Ok(traj)
}
