//! Costates p' = -p·M(t) with M(t) a selection of the Clarke Jacobian of
//! f + sum g_i u^i, and fundamental matrices of the variational equation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::control::Control;
use super::trajectory::Trajectory;
use super::ControlAffineSystem;
use crate::error::{CoreError, Result};
use crate::geometry::bracket::clarke_vertices;
use crate::ode::{integrate, OdeOptions, OdeStats, Solution};

/// Radius used to find the pieces adjacent to a trajectory point.
pub const SELECTION_PROBE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    /// The piece the trajectory was integrated with (the incoming piece
    /// at surface times).
    DifferentiableSide,
    /// The k-th vertex (cyclically) of each field's Clarke hull.
    Vertex(usize),
    /// Mean of each field's Clarke hull vertices.
    Midpoint,
}

impl SelectionPolicy {
    pub fn tag(&self) -> String {
        match self {
            SelectionPolicy::DifferentiableSide => "differentiable-side".into(),
            SelectionPolicy::Vertex(k) => format!("vertex-{k}"),
            SelectionPolicy::Midpoint => "midpoint".into(),
        }
    }
}

/// Selection M(t) at time t, with the control taken from piece `ck`.
pub fn selection_at(
    sys: &ControlAffineSystem,
    traj: &Trajectory,
    u: &Control,
    ck: usize,
    policy: SelectionPolicy,
    t: f64,
) -> Result<DMatrix<f64>> {
    let x = traj.eval(t);
    let uv = u.eval_in(ck, t);
    let n = sys.n();
    let mut m = DMatrix::zeros(n, n);
    let mode = traj.mode_at(t);
    for (k, field) in sys.fields().enumerate() {
        let w = if k == 0 { 1.0 } else { uv[k - 1] };
        if w == 0.0 {
            continue;
        }
        let j = if field.is_single_piece() {
            field.jacobian_piece(0, &x)
        } else {
            match policy {
                SelectionPolicy::DifferentiableSide => {
                    let piece = mode.map(|md| md[k]).unwrap_or_else(|| field.piece_at(x.as_slice()));
                    field.jacobian_piece(piece, &x)
                }
                SelectionPolicy::Vertex(v) => {
                    let vs = clarke_vertices(field, &x, SELECTION_PROBE);
                    if vs.is_empty() {
                        return Err(CoreError::SelectionUnavailable(t));
                    }
                    vs[v % vs.len()].clone()
                }
                SelectionPolicy::Midpoint => {
                    let vs = clarke_vertices(field, &x, SELECTION_PROBE);
                    if vs.is_empty() {
                        return Err(CoreError::SelectionUnavailable(t));
                    }
                    let c = vs.len() as f64;
                    vs.into_iter().fold(DMatrix::zeros(n, n), |a, b| a + b) / c
                }
            }
        };
        m += j * w;
    }
    Ok(m)
}

/// Whether some field with nonzero weight has several Clarke vertices at
/// the trajectory point, i.e. the selection is a genuine choice.
pub fn selection_ambiguous(sys: &ControlAffineSystem, x: &DVector<f64>, u: &DVector<f64>) -> bool {
    sys.fields().enumerate().any(|(k, f)| {
        let w = if k == 0 { 1.0 } else { u[k - 1] };
        w != 0.0 && !f.is_single_piece() && clarke_vertices(f, x, SELECTION_PROBE).len() > 1
    })
}

/// Interval end points on which M(t) is continuous, with the control
/// piece to use inside each.
fn segments(traj: &Trajectory, u: &Control, a: f64, b: f64) -> Vec<(f64, f64, usize)> {
    let mut bps: Vec<f64> = traj.breakpoints(u).into_iter().filter(|t| *t > a && *t < b).collect();
    bps.insert(0, a);
    bps.push(b);
    bps.windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| (w[0], w[1], u.piece_index(0.5 * (w[0] + w[1]))))
        .collect()
}

#[derive(Debug, Clone)]
pub struct Costate {
    pub lambda: f64,
    pub policy: SelectionPolicy,
    pub terminal: DVector<f64>,
    /// Backward solutions, ordered by decreasing time.
    pieces: Vec<(f64, f64, Solution)>,
    pub stats: OdeStats,
}

impl Costate {
    pub fn eval(&self, t: f64) -> DVector<f64> {
        for (a, b, sol) in &self.pieces {
            if t >= *a && t <= *b {
                return sol.eval(t);
            }
        }
        let (a_min, _, last) = self.pieces.last().expect("nonempty");
        if t < *a_min {
            last.y_end.clone()
        } else {
            self.terminal.clone()
        }
    }

    /// |(p(T), lambda)|.
    pub fn norm(&self) -> f64 {
        (self.terminal.norm_squared() + self.lambda * self.lambda).sqrt()
    }
}

/// Integrates p' = -p·M(t) backward from `traj.end()` to `traj.start()`.
pub fn integrate_adjoint(
    sys: &ControlAffineSystem,
    traj: &Trajectory,
    u: &Control,
    p_terminal: &DVector<f64>,
    lambda: f64,
    policy: SelectionPolicy,
    tol: f64,
) -> Result<Costate> {
    if lambda < 0.0 || (p_terminal.norm_squared() + lambda * lambda).sqrt() < 1e-12 {
        return Err(CoreError::NoCandidate("terminal multiplier must be nontrivial with lambda >= 0".into()));
    }
    let opts = OdeOptions::with_tol(tol);
    let mut p = p_terminal.clone();
    let mut pieces = Vec::new();
    let mut stats = OdeStats::default();
    let mut failure = None;
    for (a, b, ck) in segments(traj, u, traj.start(), traj.end()).into_iter().rev() {
        let sol = integrate(
            |t, y: &DVector<f64>| match selection_at(sys, traj, u, ck, policy, t) {
                Ok(m) => -(m.transpose() * y),
                Err(e) => {
                    failure = Some(e);
                    DVector::zeros(y.len())
                }
            },
            b,
            p.clone(),
            a,
            &opts,
            |_| None,
        )?;
        if let Some(e) = failure.take() {
            return Err(e);
        }
        stats.absorb(&sol.stats);
        p = sol.y_end.clone();
        pieces.push((a, b, sol));
    }
    Ok(Costate { lambda, policy, terminal: p_terminal.clone(), pieces, stats })
}

/// E(t_end) for dE/ds = M(s) E, E(t1) = I.
pub fn fundamental_matrix(
    mut m: impl FnMut(f64) -> DMatrix<f64>,
    n: usize,
    t1: f64,
    t_end: f64,
    tol: f64,
) -> Result<DMatrix<f64>> {
    let opts = OdeOptions::with_tol(tol);
    let e0 = DVector::from_column_slice(DMatrix::<f64>::identity(n, n).as_slice());
    let sol = integrate(
        |t, y| {
            let e = DMatrix::from_column_slice(n, n, y.as_slice());
            DVector::from_column_slice((m(t) * e).as_slice())
        },
        t1,
        e0,
        t_end,
        &opts,
        |_| None,
    )?;
    Ok(DMatrix::from_column_slice(n, n, sol.y_end.as_slice()))
}

/// Fundamental matrix of the variational equation along `traj` from t1 to
/// t_end, restarted at every breakpoint.
pub fn transport_matrix(
    sys: &ControlAffineSystem,
    traj: &Trajectory,
    u: &Control,
    policy: SelectionPolicy,
    t1: f64,
    t_end: f64,
    tol: f64,
) -> Result<DMatrix<f64>> {
    let n = sys.n();
    let mut e = DMatrix::identity(n, n);
    for (a, b, ck) in segments(traj, u, t1, t_end) {
        let mut failure = None;
        let seg = fundamental_matrix(
            |t| match selection_at(sys, traj, u, ck, policy, t) {
                Ok(m) => m,
                Err(err) => {
                    failure = Some(err);
                    DMatrix::zeros(n, n)
                }
            },
            n,
            a,
            b,
            tol,
        )?;
        if let Some(err) = failure {
            return Err(err);
        }
        e = seg * e;
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::super::test_systems::{example_system, smooth};
    use super::super::trajectory::integrate_trajectory;
    use super::super::{ControlAffineSystem, ControlBox};
    use super::*;

    fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
        // scaling and squaring with a Taylor series
        let s = (a.norm().log2().ceil().max(0.0) as i32) + 4;
        let b = a / 2f64.powi(s);
        let n = a.nrows();
        let mut term = DMatrix::identity(n, n);
        let mut sum = DMatrix::identity(n, n);
        for k in 1..25 {
            term = &term * &b / k as f64;
            sum += &term;
        }
        for _ in 0..s {
            sum = &sum * &sum;
        }
        sum
    }

    #[test]
    fn example_costate_is_constant() {
        let sys = example_system();
        let u = Control::constant(&[0.0], 4.0);
        let tr = integrate_trajectory(&sys, &u, &DVector::from_vec(vec![0.0, 0.0, -4.0]), 4.0, 1e-10).unwrap();
        let pt = DVector::from_vec(vec![0.0, -2.0, 1.0]);
        for policy in [SelectionPolicy::DifferentiableSide, SelectionPolicy::Vertex(1), SelectionPolicy::Midpoint] {
            let c = integrate_adjoint(&sys, &tr, &u, &pt, 1.0, policy, 1e-10).unwrap();
            for k in 0..=40 {
                assert!((c.eval(0.1 * k as f64) - &pt).norm() < 1e-12);
            }
        }
        let e = transport_matrix(&sys, &tr, &u, SelectionPolicy::DifferentiableSide, 0.5, 4.0, 1e-10).unwrap();
        assert!((e - DMatrix::identity(3, 3)).amax() < 1e-12);
    }

    #[test]
    fn linear_system_matches_matrix_exponential() {
        let f = smooth(2, &["x2", "-x1 - 0.5*x2"]);
        let g = smooth(2, &["0", "1"]);
        let sys = ControlAffineSystem::new(f, vec![g], ControlBox::symmetric(1, 1.0)).unwrap();
        let u = Control::constant(&[0.3], 2.0);
        let tr = integrate_trajectory(&sys, &u, &DVector::from_vec(vec![1.0, 0.0]), 2.0, 1e-11).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -0.5]);
        let pt = DVector::from_vec(vec![0.4, -1.0]);
        let c = integrate_adjoint(&sys, &tr, &u, &pt, 1.0, SelectionPolicy::DifferentiableSide, 1e-11).unwrap();
        for t in [0.0, 0.7, 1.5] {
            let oracle = expm(&(a.transpose() * (2.0 - t))) * &pt;
            assert!((c.eval(t) - oracle).norm() < 1e-8, "t = {t}");
        }
        let e = transport_matrix(&sys, &tr, &u, SelectionPolicy::DifferentiableSide, 0.5, 2.0, 1e-11).unwrap();
        assert!((e - expm(&(a * 1.5))).amax() < 1e-8);
    }

    #[test]
    fn constant_and_zero_fundamental_matrices() {
        let e = fundamental_matrix(|_| DMatrix::zeros(2, 2), 2, 0.0, 1.0, 1e-10).unwrap();
        assert_eq!(e, DMatrix::identity(2, 2));
        let m = DMatrix::from_row_slice(2, 2, &[0.1, 2.0, -1.0, 0.3]);
        let e = fundamental_matrix(|_| m.clone(), 2, 0.5, 1.7, 1e-12).unwrap();
        assert!((e - expm(&(m * 1.2))).amax() < 1e-8);
    }

    #[test]
    fn trivial_multiplier_rejected() {
        let sys = example_system();
        let u = Control::constant(&[0.0], 1.0);
        let tr = integrate_trajectory(&sys, &u, &DVector::zeros(3), 1.0, 1e-10).unwrap();
        assert!(integrate_adjoint(&sys, &tr, &u, &DVector::zeros(3), 0.0, SelectionPolicy::Midpoint, 1e-10).is_err());
    }
}
