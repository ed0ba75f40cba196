//! Convolution with the standard bump kernel by tensor Gauss–Legendre
//! quadrature.

use nalgebra::{DMatrix, DVector};

use super::field::PiecewiseField;
use crate::error::{CoreError, Result};

pub const DEFAULT_NODES: usize = 17;
pub const MAX_MOLLIFY_DIM: usize = 3;

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else if n == 1 { x } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pm) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        xs[i] = x;
        ws[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (xs, ws)
}

/// Unnormalised bump exp(1/(|h|^2 - 1)) on the open unit ball.
pub fn bump(r2: f64) -> f64 {
    if r2 >= 1.0 {
        0.0
    } else {
        (1.0 / (r2 - 1.0)).exp()
    }
}

/// Normalising constant C of the bump in dimension n, from a fine radial
/// rule (reference value only; the quadrature weights are normalised on
/// the discrete rule).
pub fn analytic_constant(n: usize) -> f64 {
    let (xs, ws) = gauss_legendre(64);
    // radial integral over [0,1], split in 8 panels
    let mut radial = 0.0;
    for p in 0..8 {
        let (a, b) = (p as f64 / 8.0, (p + 1) as f64 / 8.0);
        for (x, w) in xs.iter().zip(&ws) {
            let r = 0.5 * (a + b) + 0.5 * (b - a) * x;
            radial += 0.5 * (b - a) * w * r.powi(n as i32 - 1) * bump(r * r);
        }
    }
    let sphere = match n {
        1 => 2.0,
        2 => 2.0 * std::f64::consts::PI,
        3 => 4.0 * std::f64::consts::PI,
        _ => {
            // 2 pi^(n/2) / Gamma(n/2) via the recursion S_n = 2 pi / (n-2) S_{n-2}
            let mut s = if n.is_multiple_of(2) { 2.0 * std::f64::consts::PI } else { 4.0 * std::f64::consts::PI };
            let mut k = if n.is_multiple_of(2) { 2 } else { 3 };
            while k < n {
                s *= 2.0 * std::f64::consts::PI / k as f64;
                k += 2;
            }
            s
        }
    };
    1.0 / (sphere * radial)
}

/// Kernel phi_eta = eta^-n phi(h / eta) discretised on a tensor grid of the
/// unit ball.
#[derive(Debug, Clone)]
pub struct Mollifier {
    pub eta: f64,
    pub nodes_per_axis: usize,
    pub dim: usize,
    /// Unit-ball nodes and weights summing to one.
    pub rule: Vec<(DVector<f64>, f64)>,
    /// Integral of C*bump on the rule before normalisation.
    pub raw_mass: f64,
}

impl Mollifier {
    pub fn new(dim: usize, eta: f64, nodes_per_axis: usize) -> Result<Mollifier> {
        if dim > MAX_MOLLIFY_DIM {
            return Err(CoreError::QuadratureBudgetExceeded(dim));
        }
        assert!(eta > 0.0, "eta must be positive");
        let (xs, ws) = gauss_legendre(nodes_per_axis);
        let mut rule = Vec::new();
        let total = nodes_per_axis.pow(dim as u32);
        let mut mass = 0.0;
        for idx in 0..total {
            let mut rem = idx;
            let mut h = DVector::zeros(dim);
            let mut w = 1.0;
            for a in 0..dim {
                let k = rem % nodes_per_axis;
                rem /= nodes_per_axis;
                h[a] = xs[k];
                w *= ws[k];
            }
            let b = bump(h.norm_squared());
            if b > 0.0 {
                mass += w * b;
                rule.push((h, w * b));
            }
        }
        for (_, w) in rule.iter_mut() {
            *w /= mass;
        }
        Ok(Mollifier { eta, nodes_per_axis, dim, rule, raw_mass: mass * analytic_constant(dim) })
    }

    pub fn standard(dim: usize, eta: f64) -> Result<Mollifier> {
        Mollifier::new(dim, eta, DEFAULT_NODES)
    }

    /// The normalised kernel phi_eta(h).
    pub fn kernel(&self, h: &DVector<f64>) -> f64 {
        let n = h.len() as f64;
        analytic_constant(h.len()) * bump(h.norm_squared() / (self.eta * self.eta)) / self.eta.powf(n)
    }

    /// Convolution of an arbitrary vector function.
    pub fn convolve(&self, x: &DVector<f64>, f: impl Fn(&DVector<f64>) -> DVector<f64>) -> DVector<f64> {
        let mut acc: Option<DVector<f64>> = None;
        for (h, w) in &self.rule {
            let v = f(&(x - h * self.eta)) * *w;
            acc = Some(match acc {
                None => v,
                Some(a) => a + v,
            });
        }
        acc.expect("nonempty rule")
    }
}

/// F_eta = F * phi_eta, with quadrature Jacobians and Hessians.
#[derive(Debug, Clone)]
pub struct MollifiedField {
    pub field: PiecewiseField,
    pub mollifier: Mollifier,
}

impl MollifiedField {
    pub fn new(field: PiecewiseField, eta: f64) -> Result<MollifiedField> {
        let mollifier = Mollifier::standard(field.dim, eta)?;
        Ok(MollifiedField { field, mollifier })
    }

    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        self.mollifier.convolve(x, |y| self.field.eval(y))
    }

    /// (DF)_eta, which equals D(F_eta) for Lipschitz F.
    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let f = &self.field;
        let mut acc = DMatrix::zeros(f.out_dim, f.dim);
        for (h, w) in &self.mollifier.rule {
            let y = x - h * self.mollifier.eta;
            let k = f.piece_at(y.as_slice());
            acc += f.jacobian_piece(k, &y) * *w;
        }
        acc
    }

    /// (D^2 F)_eta, one matrix per component; equals D^2(F_eta) only when
    /// DF is Lipschitz.
    pub fn hessian(&self, x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let f = &self.field;
        let mut acc = vec![DMatrix::zeros(f.dim, f.dim); f.out_dim];
        for (h, w) in &self.mollifier.rule {
            let y = x - h * self.mollifier.eta;
            let k = f.piece_at(y.as_slice());
            for (a, m) in f.pieces[k].hessian(y.as_slice()).into_iter().enumerate() {
                acc[a] += m * *w;
            }
        }
        acc
    }
}

/// [X_eta, Y_eta](x) from quadrature Jacobians.
pub fn mollified_bracket(x: &MollifiedField, y: &MollifiedField, p: &DVector<f64>) -> DVector<f64> {
    y.jacobian(p) * x.eval(p) - x.jacobian(p) * y.eval(p)
}

/// [[X_eta, Y_eta], Z_eta](x); X and Y must be C1_1 so that their
/// mollified Hessians are exact.
pub fn mollified_bracket3(x: &MollifiedField, y: &MollifiedField, z: &MollifiedField, p: &DVector<f64>) -> DVector<f64> {
    let (xv, yv, zv) = (x.eval(p), y.eval(p), z.eval(p));
    let (dx, dy, dz) = (x.jacobian(p), y.jacobian(p), z.jacobian(p));
    let (hx, hy) = (x.hessian(p), y.hessian(p));
    let n = p.len();
    let w = &dy * &xv - &dx * &yv;
    // D[X,Y] = D(DY·X) − D(DX·Y)
    let mut dw = &dy * &dx - &dx * &dy;
    for r in 0..n {
        for c in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += hy[r][(k, c)] * xv[k] - hx[r][(k, c)] * yv[k];
            }
            dw[(r, c)] += s;
        }
    }
    // [W, Z] = DZ·W − DW·Z
    dz * w - dw * zv
}
