//! Least-squares fits used for order and constant estimates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Values at or below this are treated as integration noise.
pub fn noise_floor(tol: f64) -> f64 {
    (100.0 * tol).max(1e-13)
}

/// y ~ C x^slope fitted in log-log coordinates on the points above the
/// noise floor. With fewer than three such points the data are reported
/// as exact (indistinguishable from zero).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    pub slope: f64,
    pub log_constant: f64,
    pub r2: f64,
    pub slope_se: f64,
    pub used: usize,
    pub exact: bool,
}

impl PowerFit {
    /// Slope at least `min`, counting exact data as passing.
    pub fn meets(&self, min: f64) -> bool {
        self.exact || self.slope >= min
    }

    pub fn stable(&self, min_r2: f64) -> bool {
        self.exact || self.r2 >= min_r2
    }
}

/// Ordinary least squares y = a + b x; returns (a, b, r2, se_b).
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sxx == 0.0 {
        return (my, 0.0, 0.0, f64::INFINITY);
    }
    let b = sxy / sxx;
    let a = my - b * mx;
    let sse: f64 = x.iter().zip(y).map(|(u, v)| (v - a - b * u).powi(2)).sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    let se = if x.len() > 2 { (sse / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    (a, b, r2, se)
}

pub fn fit_power(x: &[f64], y: &[f64], floor: f64) -> PowerFit {
    let (lx, ly): (Vec<f64>, Vec<f64>) =
        x.iter().zip(y).filter(|(a, b)| **a > 0.0 && **b > floor).map(|(a, b)| (a.ln(), b.ln())).unzip();
    if lx.len() < 3 {
        return PowerFit { slope: f64::NAN, log_constant: f64::NAN, r2: 1.0, slope_se: 0.0, used: lx.len(), exact: true };
    }
    let (a, b, r2, se) = linear_fit(&lx, &ly);
    PowerFit { slope: b, log_constant: a, r2, slope_se: se, used: lx.len(), exact: false }
}

/// Least squares y ~ X c with standard errors of c.
pub fn regress(design: &DMatrix<f64>, y: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let p = design.ncols();
    let n = design.nrows();
    // column scaling keeps the normal equations well conditioned
    let scales: Vec<f64> = (0..p).map(|j| design.column(j).norm().max(f64::MIN_POSITIVE)).collect();
    let mut xs = design.clone();
    for j in 0..p {
        xs.column_mut(j).scale_mut(1.0 / scales[j]);
    }
    let svd = xs.clone().svd(true, true);
    let c = svd.solve(y, 1e-14).expect("svd solve");
    let resid = y - &xs * &c;
    let dof = (n as f64 - p as f64).max(1.0);
    let s2 = resid.norm_squared() / dof;
    let xtx = xs.transpose() * &xs;
    let cov = xtx.pseudo_inverse(1e-14).expect("pseudo inverse") * s2;
    let coef = DVector::from_iterator(p, (0..p).map(|j| c[j] / scales[j]));
    let se = DVector::from_iterator(p, (0..p).map(|j| cov[(j, j)].max(0.0).sqrt() / scales[j]));
    (coef, se)
}
