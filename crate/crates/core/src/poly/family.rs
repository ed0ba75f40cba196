//! The constrained space P#([0,1]) and the polynomial families used to
//! build Goh and step-2 variations.

use num::{BigInt, BigRational, One, Signed, Zero};
use serde::{Deserialize, Serialize};

use super::rational::{area, nullspace, rat_to_f64, solve_exact, RatPoly};
use crate::error::{CoreError, Result};

pub const DEFAULT_DEGREE_CAP: usize = 12;

fn int(v: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(v))
}

/// Row of the functional P -> integral of P*Q over monomial coefficients.
fn inner_row(q: &RatPoly, d: usize) -> Vec<BigRational> {
    (0..=d)
        .map(|k| {
            q.coeffs()
                .iter()
                .enumerate()
                .fold(BigRational::zero(), |acc, (l, c)| acc + c / int((k + l + 1) as i64))
        })
        .collect()
}

fn psharp_rows(d: usize) -> Vec<Vec<BigRational>> {
    let at0 = (0..=d).map(|k| if k == 0 { BigRational::one() } else { BigRational::zero() }).collect();
    let at1 = vec![BigRational::one(); d + 1];
    let mean = (0..=d).map(|k| BigRational::one() / int(k as i64 + 1)).collect();
    vec![at0, at1, mean]
}

fn gram(d: usize) -> Vec<Vec<BigRational>> {
    (0..=d).map(|k| (0..=d).map(|l| BigRational::one() / int((k + l + 1) as i64)).collect()).collect()
}

/// L^2 projection of `p` onto the null space of `rows`, inside polynomials
/// of degree <= d.
fn project_onto(p: &RatPoly, rows: &[Vec<BigRational>], d: usize) -> RatPoly {
    let basis = nullspace(rows, d + 1);
    if basis.is_empty() {
        return RatPoly::zero();
    }
    let h = gram(d);
    let hb: Vec<Vec<BigRational>> = basis
        .iter()
        .map(|b| (0..=d).map(|k| (0..=d).fold(BigRational::zero(), |acc, l| acc + &h[k][l] * &b[l])).collect())
        .collect();
    let r = basis.len();
    let lhs: Vec<Vec<BigRational>> = (0..r)
        .map(|a| (0..r).map(|c| (0..=d).fold(BigRational::zero(), |acc, k| acc + &hb[a][k] * &basis[c][k])).collect())
        .collect();
    let rhs: Vec<BigRational> =
        (0..r).map(|a| (0..=d).fold(BigRational::zero(), |acc, k| acc + &hb[a][k] * p.coeff(k))).collect();
    let c = solve_exact(lhs, rhs).expect("Gram matrix of a basis is invertible");
    let coeffs = (0..=d).map(|k| (0..r).fold(BigRational::zero(), |acc, a| acc + &c[a] * &basis[a][k])).collect();
    RatPoly::new(coeffs)
}

/// Orthogonal projection onto P# within polynomials of degree
/// <= max(cap, deg p).
pub fn project_to_psharp(p: &RatPoly, cap: usize) -> RatPoly {
    let d = cap.max(p.degree().unwrap_or(0)).max(3);
    project_onto(p, &psharp_rows(d), d)
}

/// Shifted Legendre polynomial of degree k on [0,1].
pub fn shifted_legendre(k: usize) -> RatPoly {
    let binom = |n: usize, r: usize| -> BigInt {
        let mut acc = BigInt::one();
        for t in 0..r {
            acc = acc * BigInt::from(n - t) / BigInt::from(t + 1);
        }
        acc
    };
    let coeffs = (0..=k)
        .map(|i| {
            let sign = if (k + i).is_multiple_of(2) { 1 } else { -1 };
            BigRational::from_integer(binom(k, i) * binom(k + i, i) * BigInt::from(sign))
        })
        .collect();
    RatPoly::new(coeffs)
}

/// The polynomials P^1..P^m attached to a pair (j, i), 0 <= j < i <= m.
#[derive(Debug, Clone, PartialEq)]
pub struct GohPolyFamily {
    pub m: usize,
    pub j: usize,
    pub i: usize,
    /// `polys[r - 1]` is P^r.
    pub polys: Vec<RatPoly>,
    pub degree: usize,
}

/// Which functional must not vanish on the designated polynomial.
fn nondegeneracy(fam_j: usize, fam_i: usize, p: &RatPoly, polys: &[Option<RatPoly>]) -> BigRational {
    if fam_j == 0 {
        // integral of t p'(t) = p(1) - integral of p
        p.eval(&BigRational::one()) - p.integral01()
    } else {
        let pi = polys[fam_i - 1].as_ref().expect("P^i is built before P^j");
        p.inner(&pi.derivative())
    }
}

fn try_build(m: usize, j: usize, i: usize, d: usize) -> Option<Vec<RatPoly>> {
    let mut polys: Vec<Option<RatPoly>> = vec![None; m];
    // each member starts from a fresh seed so members stay independent
    let mut next_seed = 0;
    for r in (1..=m).rev() {
        let designated = (j != 0 && r == j) || (j == 0 && r == i);
        let mut rows = if j == 0 && r == i {
            // only p(0) = p(1) is imposed on this one
            vec![(0..=d).map(|k| if k == 0 { BigRational::zero() } else { BigRational::one() }).collect()]
        } else {
            psharp_rows(d)
        };
        for s in (r + 1)..=m {
            if j != 0 && r == j && s == i {
                continue;
            }
            let ps = polys[s - 1].as_ref().expect("built");
            rows.push(inner_row(&ps.derivative(), d));
        }
        let mut chosen = None;
        for k in next_seed..=d {
            let q = project_onto(&shifted_legendre(k), &rows, d);
            if q.is_zero() {
                continue;
            }
            if designated && nondegeneracy(j, i, &q, &polys).is_zero() {
                continue;
            }
            chosen = Some(normalise(q));
            next_seed = k + 1;
            break;
        }
        if chosen.is_none() && designated && j != 0 {
            // project the representer of <., dP^i> itself
            let di = polys[i - 1].as_ref().expect("built").derivative();
            let q = project_onto(&di, &rows, d);
            if !q.is_zero() {
                chosen = Some(normalise(q));
            }
        }
        polys[r - 1] = Some(chosen?);
    }
    let mut out: Vec<RatPoly> = polys.into_iter().map(|p| p.expect("built")).collect();
    if j != 0 {
        if area(&out[i - 1], &out[j - 1]).is_negative() {
            out[j - 1] = -&out[j - 1];
        }
    } else {
        let pi = &out[i - 1];
        if (pi.eval(&BigRational::one()) - pi.integral01()).is_negative() {
            out[i - 1] = -&out[i - 1];
        }
    }
    Some(out)
}

/// Rescales so the largest coefficient has magnitude 1.
fn normalise(p: RatPoly) -> RatPoly {
    let s = p.max_abs_coeff();
    if s.is_zero() {
        p
    } else {
        p.scale(&(BigRational::one() / s))
    }
}

/// Builds the family for the pair (j, i); degrees are tried from 4 up to
/// `cap`.
pub fn build_goh_family(m: usize, j: usize, i: usize, cap: usize) -> Result<GohPolyFamily> {
    if m == 0 || i == 0 || i > m || j >= i {
        return Err(CoreError::KindError(format!("need 0 <= j < i <= m, got j={j}, i={i}, m={m}")));
    }
    for d in 4..=cap {
        if let Some(polys) = try_build(m, j, i, d) {
            return Ok(GohPolyFamily { m, j, i, polys, degree: d });
        }
    }
    Err(CoreError::DegreeCapTooSmall(cap))
}

/// Independent re-verification of the family constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyCheck {
    pub members_in_psharp: bool,
    pub orthogonality_ok: bool,
    /// <P^j, dP^i> (j > 0) or the integral of t dP^i (j = 0).
    pub designated_value: f64,
    /// Area(P^i, P^j) for j > 0.
    pub area: Option<f64>,
}

impl GohPolyFamily {
    pub fn poly(&self, r: usize) -> &RatPoly {
        &self.polys[r - 1]
    }

    pub fn check(&self) -> FamilyCheck {
        let (m, j, i) = (self.m, self.j, self.i);
        let mut in_sharp = true;
        let mut orth = true;
        for r in 1..=m {
            let p = self.poly(r);
            if j == 0 && r == i {
                in_sharp &= (p.eval(&BigRational::one()) - p.eval(&BigRational::zero())).is_zero();
            } else {
                in_sharp &= p.in_psharp();
            }
            let others: Vec<usize> = if j == 0 && r == i { (1..=m).collect() } else { (r + 1..=m).collect() };
            for s in others {
                if j != 0 && r == j && s == i {
                    continue;
                }
                orth &= p.inner(&self.poly(s).derivative()).is_zero();
            }
        }
        let (designated, ar) = if j == 0 {
            let p = self.poly(i);
            (p.eval(&BigRational::one()) - p.integral01(), None)
        } else {
            let v = self.poly(j).inner(&self.poly(i).derivative());
            (v, Some(rat_to_f64(&area(self.poly(i), self.poly(j)))))
        };
        FamilyCheck {
            members_in_psharp: in_sharp,
            orthogonality_ok: orth,
            designated_value: rat_to_f64(&designated),
            area: ar,
        }
    }

    /// max over r and t in [0,1] of |dP^r/dt|, sampled on 2001 points.
    pub fn derivative_bound(&self) -> f64 {
        let mut best: f64 = 0.0;
        for p in &self.polys {
            let d = p.derivative();
            for k in 0..=2000 {
                best = best.max(d.eval_f64(k as f64 / 2000.0).abs());
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::rational::tilde_p;

    #[test]
    fn projection_fixes_psharp_members() {
        assert_eq!(project_to_psharp(&tilde_p(), DEFAULT_DEGREE_CAP), tilde_p());
        assert!(project_to_psharp(&RatPoly::zero(), DEFAULT_DEGREE_CAP).is_zero());
    }

    #[test]
    fn projection_of_t_is_orthogonal_residual() {
        let t = RatPoly::monomial(1);
        let q = project_to_psharp(&t, 6);
        assert!(!q.is_zero());
        assert!(q.in_psharp());
        // residual orthogonal to P# members of low degree
        let r = &t - &q;
        let test = &tilde_p() * &RatPoly::from_ints(&[1, 1]);
        let test = project_to_psharp(&test, 6);
        assert!(r.inner(&test).is_zero());
    }

    #[test]
    fn families_satisfy_constraints() {
        for (m, j, i) in [(1, 0, 1), (2, 1, 2), (2, 0, 2), (2, 0, 1), (3, 1, 3), (3, 2, 3), (4, 0, 2)] {
            let fam = build_goh_family(m, j, i, DEFAULT_DEGREE_CAP).unwrap_or_else(|e| panic!("{m} {j} {i}: {e}"));
            let c = fam.check();
            assert!(c.members_in_psharp, "{m} {j} {i}");
            assert!(c.orthogonality_ok, "{m} {j} {i}");
            assert!(c.designated_value != 0.0);
            if j == 0 {
                assert!(c.designated_value > 0.0);
            } else {
                assert!(c.area.unwrap() > 0.0);
            }
        }
    }

    #[test]
    fn bad_pair_is_rejected() {
        assert!(build_goh_family(2, 2, 1, 12).is_err());
        assert!(matches!(build_goh_family(6, 1, 6, 4), Err(CoreError::DegreeCapTooSmall(4))));
    }
}
