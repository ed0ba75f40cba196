//! Floating-point polynomials in a local scaled variable.

use serde::{Deserialize, Serialize};

/// p(t) = sum_k c[k] * ((t - t0) / h)^k.
///
/// Keeping the expansion point and scale local avoids the cancellation a
/// monomial basis in absolute time would suffer on short windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledPoly {
    pub t0: f64,
    pub h: f64,
    pub c: Vec<f64>,
}

impl ScaledPoly {
    pub fn new(t0: f64, h: f64, c: Vec<f64>) -> ScaledPoly {
        assert!(h > 0.0, "scale must be positive");
        ScaledPoly { t0, h, c }
    }

    pub fn constant(t0: f64, h: f64, v: f64) -> ScaledPoly {
        ScaledPoly::new(t0, h, vec![v])
    }

    pub fn zero(t0: f64, h: f64) -> ScaledPoly {
        ScaledPoly::new(t0, h, Vec::new())
    }

    pub fn is_zero(&self) -> bool {
        self.c.iter().all(|&v| v == 0.0)
    }

    pub fn eval_local(&self, s: f64) -> f64 {
        self.c.iter().rev().fold(0.0, |acc, &v| acc * s + v)
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.eval_local((t - self.t0) / self.h)
    }

    /// Same function written around a new expansion point and scale.
    pub fn rebase(&self, t0: f64, h: f64) -> ScaledPoly {
        // sigma_old = a + b * sigma_new
        let a = (t0 - self.t0) / self.h;
        let b = h / self.h;
        ScaledPoly::new(t0, h, compose_affine(&self.c, a, b))
    }

    /// q(t) = p(2 * center - t), i.e. time reflection around `center`,
    /// written around `t0` with scale `h`.
    pub fn reflect(&self, center: f64, t0: f64, h: f64) -> ScaledPoly {
        // sigma_old = (2c - t0 - h s - t0_old) / h_old
        let a = (2.0 * center - t0 - self.t0) / self.h;
        let b = -h / self.h;
        ScaledPoly::new(t0, h, compose_affine(&self.c, a, b))
    }

    pub fn add(&self, other: &ScaledPoly) -> ScaledPoly {
        let o = if other.t0 == self.t0 && other.h == self.h { other.clone() } else { other.rebase(self.t0, self.h) };
        let n = self.c.len().max(o.c.len());
        let c = (0..n).map(|k| self.c.get(k).unwrap_or(&0.0) + o.c.get(k).unwrap_or(&0.0)).collect();
        ScaledPoly::new(self.t0, self.h, c)
    }

    pub fn scale(&self, s: f64) -> ScaledPoly {
        ScaledPoly::new(self.t0, self.h, self.c.iter().map(|v| v * s).collect())
    }

    /// Product; `other` must share the expansion point and scale.
    pub fn mul(&self, other: &ScaledPoly) -> ScaledPoly {
        debug_assert!(other.t0 == self.t0 && other.h == self.h);
        if self.c.is_empty() || other.c.is_empty() {
            return ScaledPoly::zero(self.t0, self.h);
        }
        let mut c = vec![0.0; self.c.len() + other.c.len() - 1];
        for (i, a) in self.c.iter().enumerate() {
            for (j, b) in other.c.iter().enumerate() {
                c[i + j] += a * b;
            }
        }
        ScaledPoly::new(self.t0, self.h, c)
    }

    /// Antiderivative in t vanishing at t0.
    pub fn antiderivative(&self) -> ScaledPoly {
        let mut c = vec![0.0];
        for (k, v) in self.c.iter().enumerate() {
            c.push(v * self.h / (k as f64 + 1.0));
        }
        ScaledPoly::new(self.t0, self.h, c)
    }

    /// Derivative in t.
    pub fn derivative(&self) -> ScaledPoly {
        let c = self.c.iter().enumerate().skip(1).map(|(k, v)| v * k as f64 / self.h).collect();
        ScaledPoly::new(self.t0, self.h, c)
    }

    pub fn add_constant(&self, v: f64) -> ScaledPoly {
        let mut c = self.c.clone();
        if c.is_empty() {
            c.push(0.0);
        }
        c[0] += v;
        ScaledPoly::new(self.t0, self.h, c)
    }
}

/// Coefficients of p(a + b s) given those of p(s).
pub fn compose_affine(c: &[f64], a: f64, b: f64) -> Vec<f64> {
    // Horner in polynomial arithmetic: acc = acc * (a + b s) + c_k
    let mut acc: Vec<f64> = Vec::new();
    for &ck in c.iter().rev() {
        let mut next = vec![0.0; acc.len() + 1];
        for (i, &v) in acc.iter().enumerate() {
            next[i] += v * a;
            next[i + 1] += v * b;
        }
        next[0] += ck;
        acc = next;
    }
    acc
}
