//! Exact polynomials over the rationals on [0,1].

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num::{BigInt, BigRational, One, Signed, ToPrimitive, Zero};

pub fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

pub fn rat_to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or_else(|| {
        // very large numerators: divide in pieces
        let n = r.numer().to_f64().unwrap_or(f64::NAN);
        let d = r.denom().to_f64().unwrap_or(f64::NAN);
        n / d
    })
}

/// Polynomial with exact rational monomial coefficients, lowest degree first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RatPoly {
    coeffs: Vec<BigRational>,
}

impl RatPoly {
    pub fn new(mut coeffs: Vec<BigRational>) -> RatPoly {
        while coeffs.last().is_some_and(|c| c.is_zero()) {
            coeffs.pop();
        }
        RatPoly { coeffs }
    }

    pub fn from_ints(c: &[i64]) -> RatPoly {
        RatPoly::new(c.iter().map(|&v| BigRational::from_integer(BigInt::from(v))).collect())
    }

    pub fn zero() -> RatPoly {
        RatPoly { coeffs: Vec::new() }
    }

    pub fn monomial(k: usize) -> RatPoly {
        let mut c = vec![BigRational::zero(); k + 1];
        c[k] = BigRational::one();
        RatPoly { coeffs: c }
    }

    pub fn coeffs(&self) -> &[BigRational] {
        &self.coeffs
    }

    /// Coefficient of t^k (zero beyond the degree).
    pub fn coeff(&self, k: usize) -> BigRational {
        self.coeffs.get(k).cloned().unwrap_or_else(BigRational::zero)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn degree(&self) -> Option<usize> {
        self.coeffs.len().checked_sub(1)
    }

    pub fn eval(&self, t: &BigRational) -> BigRational {
        let mut acc = BigRational::zero();
        for c in self.coeffs.iter().rev() {
            acc = acc * t + c;
        }
        acc
    }

    pub fn eval_f64(&self, t: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * t + rat_to_f64(c))
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.coeffs.iter().map(rat_to_f64).collect()
    }

    pub fn scale(&self, s: &BigRational) -> RatPoly {
        RatPoly::new(self.coeffs.iter().map(|c| c * s).collect())
    }

    pub fn derivative(&self) -> RatPoly {
        RatPoly::new(
            self.coeffs.iter().enumerate().skip(1).map(|(k, c)| c * BigRational::from_integer(BigInt::from(k))).collect(),
        )
    }

    /// Antiderivative vanishing at 0.
    pub fn antiderivative(&self) -> RatPoly {
        let mut c = vec![BigRational::zero()];
        for (k, a) in self.coeffs.iter().enumerate() {
            c.push(a / BigRational::from_integer(BigInt::from(k as i64 + 1)));
        }
        RatPoly::new(c)
    }

    /// Exact value of the integral over [0,1].
    pub fn integral01(&self) -> BigRational {
        self.coeffs
            .iter()
            .enumerate()
            .fold(BigRational::zero(), |acc, (k, c)| acc + c / BigRational::from_integer(BigInt::from(k as i64 + 1)))
    }

    /// L^2([0,1]) inner product.
    pub fn inner(&self, other: &RatPoly) -> BigRational {
        (self * other).integral01()
    }

    /// P(0) = P(1) = integral = 0.
    pub fn in_psharp(&self) -> bool {
        self.eval(&BigRational::zero()).is_zero()
            && self.eval(&BigRational::one()).is_zero()
            && self.integral01().is_zero()
    }

    pub fn max_abs_coeff(&self) -> BigRational {
        self.coeffs.iter().map(|c| c.abs()).fold(BigRational::zero(), |a, b| if b > a { b } else { a })
    }
}

impl fmt::Display for RatPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let mut first = true;
        for (k, c) in self.coeffs.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            match k {
                0 => write!(f, "{c}")?,
                1 => write!(f, "({c})t")?,
                _ => write!(f, "({c})t^{k}")?,
            }
        }
        Ok(())
    }
}

impl Add<&RatPoly> for &RatPoly {
    type Output = RatPoly;
    fn add(self, rhs: &RatPoly) -> RatPoly {
        let n = self.coeffs.len().max(rhs.coeffs.len());
        RatPoly::new((0..n).map(|k| self.coeff(k) + rhs.coeff(k)).collect())
    }
}

impl Sub<&RatPoly> for &RatPoly {
    type Output = RatPoly;
    fn sub(self, rhs: &RatPoly) -> RatPoly {
        let n = self.coeffs.len().max(rhs.coeffs.len());
        RatPoly::new((0..n).map(|k| self.coeff(k) - rhs.coeff(k)).collect())
    }
}

impl Mul<&RatPoly> for &RatPoly {
    type Output = RatPoly;
    fn mul(self, rhs: &RatPoly) -> RatPoly {
        if self.is_zero() || rhs.is_zero() {
            return RatPoly::zero();
        }
        let mut c = vec![BigRational::zero(); self.coeffs.len() + rhs.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in rhs.coeffs.iter().enumerate() {
                c[i + j] += a * b;
            }
        }
        RatPoly::new(c)
    }
}

impl Neg for &RatPoly {
    type Output = RatPoly;
    fn neg(self) -> RatPoly {
        RatPoly::new(self.coeffs.iter().map(|c| -c).collect())
    }
}

/// The fixed step-3 profile 5t^4 - 10t^3 + 6t^2 - t.
pub fn tilde_p() -> RatPoly {
    RatPoly::from_ints(&[0, -1, 6, -10, 5])
}

/// Area(P, Q) = integral over [0,1] of P dQ.
pub fn area(p: &RatPoly, q: &RatPoly) -> BigRational {
    p.inner(&q.derivative())
}

/// Solves the square system `a x = b` exactly; `None` if singular.
pub fn solve_exact(mut a: Vec<Vec<BigRational>>, mut b: Vec<BigRational>) -> Option<Vec<BigRational>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).find(|&r| !a[r][col].is_zero())?;
        a.swap(col, piv);
        b.swap(col, piv);
        let inv = BigRational::one() / &a[col][col];
        for r in 0..n {
            if r == col || a[r][col].is_zero() {
                continue;
            }
            let factor = &a[r][col] * &inv;
            for c in col..n {
                let delta = &factor * &a[col][c];
                a[r][c] -= delta;
            }
            let delta = &factor * &b[col];
            b[r] -= delta;
        }
    }
    Some((0..n).map(|r| &b[r] / &a[r][r]).collect())
}

/// Basis of the null space of the `rows x cols` matrix `a` (exact).
pub fn nullspace(a: &[Vec<BigRational>], cols: usize) -> Vec<Vec<BigRational>> {
    let mut m: Vec<Vec<BigRational>> = a.to_vec();
    let mut pivots = Vec::new();
    let mut row = 0;
    for col in 0..cols {
        let piv = match (row..m.len()).find(|&r| !m[r][col].is_zero()) {
            Some(p) => p,
            None => continue,
        };
        m.swap(row, piv);
        let inv = BigRational::one() / &m[row][col];
        for c in 0..cols {
            m[row][c] = &m[row][c] * &inv;
        }
        for r in 0..m.len() {
            if r != row && !m[r][col].is_zero() {
                let factor = m[r][col].clone();
                for c in 0..cols {
                    let delta = &factor * &m[row][c];
                    m[r][c] -= delta;
                }
            }
        }
        pivots.push(col);
        row += 1;
        if row == m.len() {
            break;
        }
    }
    let mut basis = Vec::new();
    for free in (0..cols).filter(|c| !pivots.contains(c)) {
        let mut v = vec![BigRational::zero(); cols];
        v[free] = BigRational::one();
        for (r, &pc) in pivots.iter().enumerate() {
            v[pc] = -m[r][free].clone();
        }
        basis.push(v);
    }
    basis
}
