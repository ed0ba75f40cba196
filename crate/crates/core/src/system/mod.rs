//! Control-affine systems x' = f(x) + sum g_i(x) u^i, their trajectories
//! and costates.

pub mod adjoint;
pub mod control;
pub mod trajectory;

pub use adjoint::{fundamental_matrix, integrate_adjoint, transport_matrix, Costate, SelectionPolicy};
pub use control::{Channel, Control, ControlPiece};
pub use trajectory::{integrate_trajectory, Trajectory};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::geometry::PiecewiseField;

/// Axis-aligned box; infinite bounds are allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ControlBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<ControlBox> {
        if lower.len() != upper.len() {
            return Err(CoreError::DimensionError("control box bounds differ in length".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(CoreError::DimensionError("control box has lower > upper".into()));
        }
        Ok(ControlBox { lower, upper })
    }

    pub fn symmetric(m: usize, r: f64) -> ControlBox {
        ControlBox { lower: vec![-r; m], upper: vec![r; m] }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, u: &DVector<f64>) -> bool {
        u.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, h))| *v >= *l && *v <= *h)
    }

    /// Distance from u to the complement of the box (0 on the boundary,
    /// negative outside).
    pub fn interior_margin(&self, u: &DVector<f64>) -> f64 {
        u.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (l, h))| (v - l).min(h - v))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn diameter(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(l, h)| (h - l).powi(2)).sum::<f64>().sqrt()
    }

    /// Lattice with `per_axis` points per bounded axis; unbounded axes
    /// contribute the finite endpoint (or 0) only.
    pub fn lattice(&self, per_axis: usize) -> Vec<DVector<f64>> {
        let axes: Vec<Vec<f64>> = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(&l, &h)| {
                if l.is_finite() && h.is_finite() {
                    if per_axis <= 1 || h == l {
                        vec![0.5 * (l + h)]
                    } else {
                        (0..per_axis).map(|k| l + (h - l) * k as f64 / (per_axis - 1) as f64).collect()
                    }
                } else if l.is_finite() {
                    vec![l]
                } else if h.is_finite() {
                    vec![h]
                } else {
                    vec![0.0]
                }
            })
            .collect();
        let mut out = vec![Vec::new()];
        for ax in &axes {
            out = out
                .into_iter()
                .flat_map(|p: Vec<f64>| {
                    ax.iter().map(move |&v| {
                        let mut q = p.clone();
                        q.push(v);
                        q
                    })
                })
                .collect();
        }
        out.into_iter().map(DVector::from_vec).collect()
    }
}

/// Initial state and control of a (candidate) process.
#[derive(Debug, Clone, PartialEq)]
pub struct Process {
    pub x0: DVector<f64>,
    pub u: Control,
}

#[derive(Debug, Clone)]
pub struct ControlAffineSystem {
    pub f: PiecewiseField,
    pub g: Vec<PiecewiseField>,
    pub u_box: ControlBox,
}

impl ControlAffineSystem {
    pub fn new(f: PiecewiseField, g: Vec<PiecewiseField>, u_box: ControlBox) -> Result<ControlAffineSystem> {
        let n = f.dim;
        if g.is_empty() {
            return Err(CoreError::DimensionError("at least one controlled field is required".into()));
        }
        for (k, field) in std::iter::once(&f).chain(&g).enumerate() {
            if field.dim != n || field.out_dim != n {
                let name = if k == 0 { "f".to_string() } else { format!("g{k}") };
                return Err(CoreError::DimensionError(format!(
                    "field {name} maps R^{} to R^{}, expected R^{n} to R^{n}",
                    field.dim, field.out_dim
                )));
            }
        }
        if u_box.dim() != g.len() {
            return Err(CoreError::DimensionError(format!(
                "control box has dimension {}, expected {}",
                u_box.dim(),
                g.len()
            )));
        }
        Ok(ControlAffineSystem { f, g, u_box })
    }

    pub fn n(&self) -> usize {
        self.f.dim
    }

    pub fn m(&self) -> usize {
        self.g.len()
    }

    /// f followed by g_1..g_m.
    pub fn fields(&self) -> impl Iterator<Item = &PiecewiseField> {
        std::iter::once(&self.f).chain(self.g.iter())
    }

    pub fn field(&self, k: usize) -> &PiecewiseField {
        if k == 0 {
            &self.f
        } else {
            &self.g[k - 1]
        }
    }

    pub fn rhs(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let mut v = self.f.eval(x);
        for (gi, ui) in self.g.iter().zip(u.iter()) {
            if *ui != 0.0 {
                v.axpy(*ui, &gi.eval(x), 1.0);
            }
        }
        v
    }

    /// Right-hand side with each field locked to the given piece.
    pub fn rhs_mode(&self, mode: &[usize], x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let mut v = self.f.eval_piece(mode[0], x);
        for (k, (gi, ui)) in self.g.iter().zip(u.iter()).enumerate() {
            if *ui != 0.0 {
                v.axpy(*ui, &gi.eval_piece(mode[k + 1], x), 1.0);
            }
        }
        v
    }

    pub fn jacobian_mode(&self, mode: &[usize], x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        let mut j = self.f.jacobian_piece(mode[0], x);
        for (k, (gi, ui)) in self.g.iter().zip(u.iter()).enumerate() {
            if *ui != 0.0 {
                j += gi.jacobian_piece(mode[k + 1], x) * *ui;
            }
        }
        j
    }
}

/// H(x, p, u) = p·(f(x) + sum g_i(x) u^i).
pub fn hamiltonian(sys: &ControlAffineSystem, x: &DVector<f64>, p: &DVector<f64>, u: &DVector<f64>) -> f64 {
    p.dot(&sys.rhs(x, u))
}

/// Largest violation of the box by the control on a probe grid, if any.
pub fn box_exit(u: &Control, b: &ControlBox, probes: usize) -> Option<f64> {
    let (t0, t1) = (u.start(), u.horizon());
    let mut worst: f64 = 0.0;
    let mut times: Vec<f64> = (0..probes).map(|k| t0 + (t1 - t0) * (k as f64 + 0.5) / probes as f64).collect();
    for p in &u.pieces {
        // one-sided ends of every piece
        times.push(p.start);
        times.push(p.end - 1e-12 * (1.0 + p.end.abs()));
    }
    for t in times {
        let v = u.eval(t);
        worst = worst.max(-b.interior_margin(&v));
    }
    (worst > 0.0).then_some(worst)
}

#[cfg(test)]
pub(crate) mod test_systems {
    use super::*;
    use nsgoh_expr::{parse_condition, parse_expr};

    fn names(n: usize) -> Vec<String> {
        (1..=n).map(|k| format!("x{k}")).collect()
    }

    pub fn smooth(n: usize, src: &[&str]) -> PiecewiseField {
        let nm = names(n);
        PiecewiseField::smooth(n, src.iter().map(|s| parse_expr(s, &nm).unwrap()).collect()).unwrap()
    }

    /// f = (0, 3/2 x1^2 [x1<0] + x1^2 [x1>=0], 1), g = d/dx1, U = [-1,1].
    pub fn example_system() -> ControlAffineSystem {
        let nm = names(3);
        let c = |s: &str| parse_condition(s, &nm).unwrap();
        let e = |s: &str| parse_expr(s, &nm).unwrap();
        let f = PiecewiseField::from_pieces(
            3,
            3,
            vec![
                (vec![c("x1 < 0")], vec![e("0"), e("1.5*x1^2"), e("1")]),
                (vec![c("x1 >= 0")], vec![e("0"), e("x1^2"), e("1")]),
            ],
            None,
        )
        .unwrap();
        let g = PiecewiseField::coordinate(3, 0);
        ControlAffineSystem::new(f, vec![g], ControlBox::symmetric(1, 1.0)).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::test_systems::example_system;
    use super::*;

    #[test]
    fn hamiltonian_values() {
        let sys = example_system();
        let p = DVector::from_vec(vec![0.0, -2.0, 1.0]);
        for u in [-1.0, 0.0, 0.7] {
            let h = hamiltonian(&sys, &DVector::from_vec(vec![0.0, 0.0, -2.0]), &p, &DVector::from_element(1, u));
            assert!((h - 1.0).abs() < 1e-15);
        }
        let h = hamiltonian(&sys, &DVector::from_vec(vec![1.0, 0.0, 0.0]), &p, &DVector::zeros(1));
        assert_eq!(h, -1.0);
        assert_eq!(hamiltonian(&sys, &DVector::from_element(3, 1.0), &DVector::zeros(3), &DVector::zeros(1)), 0.0);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let f = PiecewiseField::zero(3);
        let g = PiecewiseField::zero(2);
        assert!(matches!(
            ControlAffineSystem::new(f, vec![g], ControlBox::symmetric(1, 1.0)),
            Err(CoreError::DimensionError(_))
        ));
    }

    #[test]
    fn lattice_and_margin() {
        let b = ControlBox::symmetric(2, 1.0);
        assert_eq!(b.lattice(11).len(), 121);
        assert!((b.interior_margin(&DVector::from_vec(vec![0.5, -0.2])) - 0.5).abs() < 1e-15);
        let u = Control::constant(&[1.5, 0.0], 1.0);
        assert!((box_exit(&u, &b, 10).unwrap() - 0.5).abs() < 1e-15);
    }
}
