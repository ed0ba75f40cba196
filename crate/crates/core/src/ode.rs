//! Dormand–Prince 5(4) with dense output and step-truncation hooks.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_max: f64,
    pub max_steps: usize,
    /// Abort when the state norm exceeds this.
    pub blowup: f64,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions { rtol: 1e-10, atol: 1e-12, h_max: f64::INFINITY, max_steps: 200_000, blowup: 1e8 }
    }
}

impl OdeOptions {
    pub fn with_tol(tol: f64) -> OdeOptions {
        OdeOptions { rtol: tol, atol: tol * 1e-2, ..Default::default() }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

impl OdeStats {
    pub fn absorb(&mut self, o: &OdeStats) {
        self.accepted += o.accepted;
        self.rejected += o.rejected;
        self.rhs_evals += o.rhs_evals;
    }
}

/// Continuous extension of one accepted step.
#[derive(Debug, Clone)]
pub struct DenseStep {
    pub t0: f64,
    pub h: f64,
    r: [DVector<f64>; 5],
}

impl DenseStep {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        let th = (t - self.t0) / self.h;
        let th1 = 1.0 - th;
        let [r1, r2, r3, r4, r5] = &self.r;
        r1 + (r2 + (r3 + (r4 + r5 * th1) * th) * th1) * th
    }

    pub fn start(&self) -> &DVector<f64> {
        &self.r[0]
    }
}

/// Dense solution over a sequence of steps.
#[derive(Debug, Clone)]
pub struct Solution {
    pub steps: Vec<DenseStep>,
    pub t_end: f64,
    pub y_end: DVector<f64>,
    pub stats: OdeStats,
}

impl Solution {
    pub fn eval(&self, t: f64) -> DVector<f64> {
        if self.steps.is_empty() {
            return self.y_end.clone();
        }
        let forward = self.steps[0].h > 0.0;
        let idx = self.steps.partition_point(|s| if forward { s.t1() < t } else { s.t1() > t });
        if idx >= self.steps.len() {
            return self.y_end.clone();
        }
        self.steps[idx].eval(t)
    }
}

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

/// Integrates y' = f(t, y) from t0 to t1 (either direction).
///
/// After every accepted step `stop` sees the dense step and may return a
/// time inside it at which integration ends.
pub fn integrate<F, S>(mut f: F, t0: f64, y0: DVector<f64>, t1: f64, opts: &OdeOptions, mut stop: S) -> Result<Solution>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
    S: FnMut(&DenseStep) -> Option<f64>,
{
    let mut stats = OdeStats::default();
    let span = t1 - t0;
    if span == 0.0 {
        return Ok(Solution { steps: Vec::new(), t_end: t0, y_end: y0, stats });
    }
    let dir = span.signum();
    let mut t = t0;
    let mut y = y0;
    let mut k1 = f(t, &y);
    stats.rhs_evals += 1;
    let mut h = initial_step(&y, &k1, span.abs(), opts);
    let mut steps = Vec::new();
    let mut last_err: f64 = 1e-4;
    loop {
        if stats.accepted + stats.rejected >= opts.max_steps {
            return Err(CoreError::IntegrationFailure(format!("step limit reached at t = {t}")));
        }
        let remaining = (t1 - t).abs();
        let mut hh = h.min(opts.h_max).min(remaining);
        let last = hh >= remaining * (1.0 - 1e-12);
        if last {
            hh = remaining;
        }
        let hs = dir * hh;
        let mut k: Vec<DVector<f64>> = Vec::with_capacity(7);
        k.push(k1.clone());
        for s in 1..7 {
            let mut ys = y.clone();
            for (j, kj) in k.iter().enumerate().take(s) {
                if A[s][j] != 0.0 {
                    ys.axpy(hs * A[s][j], kj, 1.0);
                }
            }
            let ts = if s >= 5 && last { t1 } else { t + C[s] * hs };
            k.push(f(ts, &ys));
            stats.rhs_evals += 1;
        }
        // the last stage is evaluated at y_new (FSAL)
        let mut y_new = y.clone();
        for (j, kj) in k.iter().enumerate().take(6) {
            if A[6][j] != 0.0 {
                y_new.axpy(hs * A[6][j], kj, 1.0);
            }
        }
        let mut err_vec = DVector::zeros(y.len());
        for (j, kj) in k.iter().enumerate() {
            if E[j] != 0.0 {
                err_vec.axpy(hs * E[j], kj, 1.0);
            }
        }
        let mut acc = 0.0;
        for i in 0..y.len() {
            let sc = opts.atol + opts.rtol * y[i].abs().max(y_new[i].abs());
            acc += (err_vec[i] / sc).powi(2);
        }
        let err = if y.is_empty() { 0.0 } else { (acc / y.len() as f64).sqrt() };
        if !err.is_finite() {
            h = hh * 0.1;
            stats.rejected += 1;
            if h < 1e-15 * (1.0 + t.abs()) {
                return Err(CoreError::IntegrationFailure(format!("non-finite derivative at t = {t}")));
            }
            continue;
        }
        if err <= 1.0 {
            stats.accepted += 1;
            let ydiff = &y_new - &y;
            let bspl = &k[0] * hs - &ydiff;
            let r4 = &ydiff - &k[6] * hs - &bspl;
            let mut r5 = DVector::zeros(y.len());
            for (j, kj) in k.iter().enumerate() {
                if D[j] != 0.0 {
                    r5.axpy(hs * D[j], kj, 1.0);
                }
            }
            let step = DenseStep { t0: t, h: hs, r: [y.clone(), ydiff, bspl, r4, r5] };
            let t_new = if last { t1 } else { t + hs };
            if let Some(ts) = stop(&step) {
                let ys = step.eval(ts);
                steps.push(step);
                return Ok(Solution { steps, t_end: ts, y_end: ys, stats });
            }
            steps.push(step);
            t = t_new;
            y = y_new;
            if y.amax() > opts.blowup {
                return Err(CoreError::BlowUp { t, bound: opts.blowup });
            }
            k1 = k.swap_remove(6);
            if last {
                return Ok(Solution { steps, t_end: t, y_end: y, stats });
            }
            // PI step-size controller
            let fac = 0.9 * err.max(1e-10).powf(-0.7 / 5.0) * last_err.powf(0.4 / 5.0);
            h = hh * fac.clamp(0.2, 5.0);
            last_err = err.max(1e-4);
        } else {
            stats.rejected += 1;
            let fac = 0.9 * err.powf(-0.2);
            h = hh * fac.clamp(0.1, 0.9);
            if h < 1e-15 * (1.0 + t.abs()) {
                return Err(CoreError::IntegrationFailure(format!("step size underflow at t = {t}")));
            }
        }
    }
}

fn initial_step(y: &DVector<f64>, f0: &DVector<f64>, span: f64, opts: &OdeOptions) -> f64 {
    let n = y.len().max(1) as f64;
    let mut d0 = 0.0;
    let mut d1 = 0.0;
    for i in 0..y.len() {
        let sc = opts.atol + opts.rtol * y[i].abs();
        d0 += (y[i] / sc).powi(2);
        d1 += (f0[i] / sc).powi(2);
    }
    let (d0, d1) = ((d0 / n).sqrt(), (d1 / n).sqrt());
    let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    // a fifth-order step with tolerance tol moves roughly tol^(1/5)
    let cap = span * opts.rtol.max(1e-14).powf(0.2);
    h.max(1e-6 * span).min(cap).min(span).min(opts.h_max)
}

/// Locates the first time in `[a, b]` where `pred` becomes true by
/// bisection, given `pred(a) == false` and `pred(b) == true`.
pub fn bisect_time(mut a: f64, mut b: f64, tol: f64, mut pred: impl FnMut(f64) -> bool) -> f64 {
    while (b - a).abs() > tol {
        let m = 0.5 * (a + b);
        if pred(m) {
            b = m;
        } else {
            a = m;
        }
    }
    b
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_and_dense_output() {
        let opts = OdeOptions::with_tol(1e-10);
        let sol = integrate(|_, y| -y, 0.0, DVector::from_element(1, 1.0), 2.0, &opts, |_| None).unwrap();
        assert!((sol.y_end[0] - (-2.0f64).exp()).abs() < 1e-9);
        for k in 0..=20 {
            let t = 0.1 * k as f64;
            assert!((sol.eval(t)[0] - (-t).exp()).abs() < 1e-8, "t = {t}");
        }
    }

    #[test]
    fn backward_integration() {
        let opts = OdeOptions::with_tol(1e-10);
        let sol = integrate(|_, y| y.clone(), 1.0, DVector::from_element(1, 1.0), 0.0, &opts, |_| None).unwrap();
        assert!((sol.y_end[0] - (-1.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn harmonic_oscillator_with_stop_hook() {
        let opts = OdeOptions::with_tol(1e-10);
        let f = |_: f64, y: &DVector<f64>| DVector::from_vec(vec![y[1], -y[0]]);
        // stop at the first zero of the position after t = 0.1
        let sol = integrate(f, 0.0, DVector::from_vec(vec![1.0, 0.0]), 10.0, &opts, |s| {
            let (a, b) = (s.start()[0], s.eval(s.t1())[0]);
            if a > 0.0 && b <= 0.0 {
                Some(bisect_time(s.t0, s.t1(), 1e-13, |t| s.eval(t)[0] <= 0.0))
            } else {
                None
            }
        })
        .unwrap();
        assert!((sol.t_end - std::f64::consts::FRAC_PI_2).abs() < 1e-8);
    }

    #[test]
    fn blowup_is_reported() {
        let opts = OdeOptions { blowup: 1e3, ..OdeOptions::with_tol(1e-8) };
        let r = integrate(|_, y| y.map(|v| v * v), 0.0, DVector::from_element(1, 1.0), 2.0, &opts, |_| None);
        assert!(matches!(r, Err(CoreError::BlowUp { .. }) | Err(CoreError::IntegrationFailure(_))));
    }
}
