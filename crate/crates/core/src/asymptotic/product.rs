//! Product-of-exponentials approximations of x(t) under a profile
//! (a^0..a^m) driving fields g_0..g_m, and the coefficient identities of the
//! reflected-window profiles.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::fit::{fit_power, noise_floor, PowerFit};
use crate::error::{CoreError, Result};
use crate::geometry::mollify::gauss_legendre;
use crate::geometry::PiecewiseField;
use crate::ode::{integrate, OdeOptions};
use crate::poly::rational::rat_to_f64;
use crate::poly::{area, CoefficientTable};
use crate::system::{integrate_trajectory, Control, ControlAffineSystem, ControlBox};
use crate::variation::{reflected_window_profile, VariationGenerator, VariationKind};

/// Element of the free associative algebra on `l` letters, truncated above
/// degree 3. Index 0 is the empty word.
#[derive(Debug, Clone, PartialEq)]
pub struct Truncated {
    l: usize,
    c: Vec<f64>,
}

impl Truncated {
    fn len(l: usize) -> usize {
        1 + l + l * l + l * l * l
    }

    pub fn zero(l: usize) -> Truncated {
        Truncated { l, c: vec![0.0; Truncated::len(l)] }
    }

    pub fn one(l: usize) -> Truncated {
        let mut t = Truncated::zero(l);
        t.c[0] = 1.0;
        t
    }

    pub fn index(&self, w: &[usize]) -> usize {
        let l = self.l;
        match w {
            [] => 0,
            [a] => 1 + a,
            [a, b] => 1 + l + a * l + b,
            [a, b, c] => 1 + l + l * l + (a * l + b) * l + c,
            _ => panic!("words longer than 3 are truncated"),
        }
    }

    pub fn get(&self, w: &[usize]) -> f64 {
        self.c[self.index(w)]
    }

    pub fn set(&mut self, w: &[usize], v: f64) {
        let k = self.index(w);
        self.c[k] = v;
    }

    fn words(l: usize, deg: usize) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new()];
        for _ in 0..deg {
            out = out
                .into_iter()
                .flat_map(|w| {
                    (0..l).map(move |a| {
                        let mut v = w.clone();
                        v.push(a);
                        v
                    })
                })
                .collect();
        }
        out
    }

    pub fn mul(&self, o: &Truncated) -> Truncated {
        let l = self.l;
        let mut r = Truncated::zero(l);
        for d1 in 0..=3 {
            for w1 in Truncated::words(l, d1) {
                let x = self.get(&w1);
                if x == 0.0 {
                    continue;
                }
                for d2 in 0..=(3 - d1) {
                    for w2 in Truncated::words(l, d2) {
                        let y = o.get(&w2);
                        if y == 0.0 {
                            continue;
                        }
                        let mut w = w1.clone();
                        w.extend(&w2);
                        let k = r.index(&w);
                        r.c[k] += x * y;
                    }
                }
            }
        }
        r
    }

    fn add_scaled(&mut self, o: &Truncated, s: f64) {
        for (a, b) in self.c.iter_mut().zip(&o.c) {
            *a += s * b;
        }
    }

    /// exp(t X_a).
    pub fn letter_exp(l: usize, a: usize, t: f64) -> Truncated {
        let mut r = Truncated::one(l);
        r.set(&[a], t);
        r.set(&[a, a], t * t / 2.0);
        r.set(&[a, a, a], t * t * t / 6.0);
        r
    }

    /// log of an element with unit constant term.
    pub fn log(&self) -> Truncated {
        let mut y = self.clone();
        y.c[0] -= 1.0;
        let y2 = y.mul(&y);
        let y3 = y2.mul(&y);
        let mut r = y.clone();
        r.add_scaled(&y2, -0.5);
        r.add_scaled(&y3, 1.0 / 3.0);
        r
    }

    pub fn degree_norm(&self, d: usize) -> f64 {
        Truncated::words(self.l, d).iter().map(|w| self.get(w).abs()).fold(0.0, f64::max)
    }
}

/// Chronological signature of a profile on its whole interval.
pub fn signature(table: &CoefficientTable) -> Truncated {
    let l = table.letters();
    let s = table.end();
    let mut t = Truncated::one(l);
    for d in 1..=table.order() {
        for w in Truncated::words(l, d) {
            t.set(&w, table.word(&w, s));
        }
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductRow {
    pub t: f64,
    pub direct: Vec<f64>,
    pub product: Vec<f64>,
    pub residual: f64,
    /// max |coefficient| in degree 1 of log(S (E_m..E_0)^-1); should vanish.
    pub log_degree1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductReport {
    pub order: usize,
    pub rows: Vec<ProductRow>,
    pub fit: PowerFit,
    pub expected_slope: f64,
    pub tol: f64,
}

impl ProductReport {
    pub fn passes(&self, min_r2: f64) -> bool {
        self.fit.meets(self.expected_slope) && self.fit.stable(min_r2)
    }
}

fn flow(fields: &[(f64, &PiecewiseField)], x: &DVector<f64>, tol: f64) -> Result<DVector<f64>> {
    if fields.iter().all(|(c, _)| *c == 0.0) {
        return Ok(x.clone());
    }
    let opts = OdeOptions { rtol: tol, atol: tol * 1e-3, ..Default::default() };
    let rhs = |_t: f64, y: &DVector<f64>| {
        let mut v = DVector::zeros(y.len());
        for (c, f) in fields {
            if *c != 0.0 {
                v.axpy(*c, &f.eval(y), 1.0);
            }
        }
        v
    };
    Ok(integrate(rhs, 0.0, x.clone(), 1.0, &opts, |_| None)?.y_end)
}

/// Endpoint of x' = sum a^k g_k(x) under the profile.
pub fn drive(fields: &[PiecewiseField], profile: &Control, x0: &DVector<f64>, tol: f64) -> Result<DVector<f64>> {
    let n = x0.len();
    let l = fields.len();
    let sys = ControlAffineSystem::new(
        PiecewiseField::zero(n),
        fields.to_vec(),
        ControlBox { lower: vec![f64::NEG_INFINITY; l], upper: vec![f64::INFINITY; l] },
    )?;
    Ok(integrate_trajectory(&sys, profile, x0, profile.horizon(), tol)?.end_state().clone())
}

/// Product approximation of order 2 or 3: flow the degree-3 Lie part
/// (order 3 only), then e^{d_{ji}[g_j,g_i]} for m >= j > i >= 0, then
/// g_m, ..., g_0 for times A^m, ..., A^0.
pub fn product_approximation(
    fields: &[PiecewiseField],
    profile: &Control,
    x0: &DVector<f64>,
    order: usize,
    tol: f64,
) -> Result<(DVector<f64>, f64)> {
    if !(2..=3).contains(&order) {
        return Err(CoreError::DimensionError(format!("product order must be 2 or 3, got {order}")));
    }
    let l = fields.len();
    if profile.m != l {
        return Err(CoreError::DimensionError(format!("profile has {} letters, expected {l}", profile.m)));
    }
    let table = CoefficientTable::new(profile, order)?;
    let s = signature(&table);
    let a: Vec<f64> = (0..l).map(|h| s.get(&[h])).collect();
    // S = exp(D) E_m..E_0, so exp(D) = S E_0^-1 .. E_m^-1
    let mut q = s.clone();
    for (h, ah) in a.iter().enumerate() {
        q = q.mul(&Truncated::letter_exp(l, h, -ah));
    }
    let d = q.log();
    let mut x = x0.clone();
    if order == 3 {
        let mut owned = Vec::new();
        for w in Truncated::words(l, 3) {
            let c = d.get(&w);
            if c != 0.0 && !(w[0] == w[1]) {
                let inner = PiecewiseField::bracket(&fields[w[0]], &fields[w[1]])?;
                owned.push((c / 3.0, PiecewiseField::bracket(&inner, &fields[w[2]])?));
            }
        }
        let refs: Vec<(f64, &PiecewiseField)> = owned.iter().map(|(c, f)| (*c, f)).collect();
        x = flow(&refs, &x, tol)?;
    }
    for j in (1..l).rev() {
        for i in (0..j).rev() {
            let c = d.get(&[j, i]);
            if c != 0.0 {
                let b = PiecewiseField::bracket(&fields[j], &fields[i])?;
                x = flow(&[(c, &b)], &x, tol)?;
            }
        }
    }
    for h in (0..l).rev() {
        x = flow(&[(a[h], &fields[h])], &x, tol)?;
    }
    Ok((x, d.degree_norm(1)))
}

/// Compares direct integration with the product approximation along a grid
/// of profile lengths; `build(t)` returns the profile on [0, t].
pub fn product_expansion_residual(
    fields: &[PiecewiseField],
    build: &dyn Fn(f64) -> Result<Control>,
    x0: &DVector<f64>,
    t_grid: &[f64],
    order: usize,
    tol: f64,
) -> Result<ProductReport> {
    let mut rows = Vec::new();
    for &t in t_grid {
        let profile = build(t)?;
        let direct = drive(fields, &profile, x0, tol)?;
        let (prod, d1) = product_approximation(fields, &profile, x0, order, tol)?;
        rows.push(ProductRow {
            t,
            residual: (&direct - &prod).norm(),
            direct: direct.iter().cloned().collect(),
            product: prod.iter().cloned().collect(),
            log_degree1: d1,
        });
    }
    let ts: Vec<f64> = rows.iter().map(|r| r.t).collect();
    let rs: Vec<f64> = rows.iter().map(|r| r.residual).collect();
    let fit = fit_power(&ts, &rs, noise_floor(tol));
    if !fit.exact && !fit.stable(0.98) {
        return Err(CoreError::OrderFitUnstable { r2: fit.r2 });
    }
    Ok(ProductReport { order, rows, fit, expected_slope: order as f64 + 0.5, tol })
}

/// Exponent k with eps = w^k for the generator's window.
fn window_power(gen: &VariationGenerator) -> Result<i32> {
    match gen.kind {
        VariationKind::Goh { .. } | VariationKind::Lc2 { .. } => Ok(2),
        VariationKind::Lc3 => Ok(3),
        VariationKind::Needle { .. } => Err(CoreError::KindError("needles have no reflected profile".into())),
    }
}

/// Reflected-window profile of length t = 2w for the generator applied to
/// `base`, as a function of t.
pub fn variation_profile_builder<'a>(
    base: &'a Control,
    gen: &'a VariationGenerator,
) -> impl Fn(f64) -> Result<Control> + 'a {
    move |t: f64| {
        let w = 0.5 * t;
        let eps = w.powi(window_power(gen)?);
        let varied = gen.apply(base, eps)?;
        reflected_window_profile(base, &varied, gen.anchor, w)
    }
}

/// Composite Gauss–Legendre values of c_a and c_{ab} at the profile end.
pub fn quadrature_words2(profile: &Control, nodes: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let l = profile.m;
    let (gx, gw) = gauss_legendre(nodes);
    let mut c1 = vec![0.0; l];
    let mut c2 = vec![vec![0.0; l]; l];
    for (k, p) in profile.pieces.iter().enumerate() {
        let (s0, s1) = (p.start, p.end);
        let half = 0.5 * (s1 - s0);
        for (x, wq) in gx.iter().zip(&gw) {
            let t = s0 + half * (x + 1.0);
            let at = profile.eval_in(k, t);
            // c_a(t) by a nested rule on [s0, t]
            let h2 = 0.5 * (t - s0);
            let mut ca = c1.clone();
            for (y, wy) in gx.iter().zip(&gw) {
                let v = profile.eval_in(k, s0 + h2 * (y + 1.0));
                for a in 0..l {
                    ca[a] += h2 * wy * v[a];
                }
            }
            for a in 0..l {
                for b in 0..l {
                    c2[a][b] += half * wq * ca[a] * at[b];
                }
            }
        }
        for (x, wq) in gx.iter().zip(&gw) {
            let v = profile.eval_in(k, s0 + half * (x + 1.0));
            for a in 0..l {
                c1[a] += half * wq * v[a];
            }
        }
    }
    (c1, c2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityRow {
    pub eps: f64,
    /// A^0 at the window end.
    pub a0: f64,
    /// max_h |A^h|.
    pub ah: f64,
    /// max_k |A^{0,k}|.
    pub a0k: f64,
    /// A^{h,k} for h < k, row-major over pairs.
    pub ahk: Vec<f64>,
    /// alpha^2 eps Area(P^h, P^k) for the same pairs.
    pub predicted: Vec<f64>,
    pub remainder: f64,
    /// max |closed form - quadrature| over all length <= 2 words.
    pub quadrature_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub rows: Vec<IdentityRow>,
    pub remainder_fit: PowerFit,
}

/// Coefficient identities of the reflected Goh profile along an eps grid.
pub fn coefficient_identities(base: &Control, gen: &VariationGenerator, eps_grid: &[f64]) -> Result<IdentityReport> {
    let fam = match (&gen.kind, &gen.family) {
        (VariationKind::Goh { .. }, Some(f)) => f,
        _ => return Err(CoreError::KindError("coefficient identities are stated for Goh generators".into())),
    };
    let m = gen.m;
    let mut rows = Vec::new();
    for &eps in eps_grid {
        let w = gen.window(eps);
        let varied = gen.apply(base, eps)?;
        let prof = reflected_window_profile(base, &varied, gen.anchor, w)?;
        let table = CoefficientTable::new(&prof, 2)?;
        let s = table.end();
        let (q1, q2) = quadrature_words2(&prof, 24);
        let mut gap: f64 = 0.0;
        for a in 0..=m {
            gap = gap.max((table.a(a, s) - q1[a]).abs());
            for b in 0..=m {
                gap = gap.max((table.word(&[a, b], s) - q2[a][b]).abs());
            }
        }
        let mut ahk = Vec::new();
        let mut predicted = Vec::new();
        for h in 1..=m {
            for k in h + 1..=m {
                ahk.push(table.aa(h, k, s));
                predicted.push(gen.alpha * gen.alpha * eps * rat_to_f64(&area(fam.poly(h), fam.poly(k))));
            }
        }
        let remainder = ahk.iter().zip(&predicted).map(|(a, p)| (a - p).abs()).fold(0.0, f64::max);
        rows.push(IdentityRow {
            eps,
            a0: table.a(0, s),
            ah: (1..=m).map(|h| table.a(h, s).abs()).fold(0.0, f64::max),
            a0k: (1..=m).map(|k| table.aa(0, k, s).abs()).fold(0.0, f64::max),
            ahk,
            predicted,
            remainder,
            quadrature_gap: gap,
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.remainder).collect();
    Ok(IdentityReport { remainder_fit: fit_power(&xs, &ys, 1e-15), rows })
}

/// Step-3 coefficients of the reflected window profile at its end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lc3WindowCoefficients {
    pub eps: f64,
    pub a01: f64,
    pub a001: f64,
    /// Literal A^{1,0,1} = int A^1 A^0 a^1.
    pub a101: f64,
    /// int (A^1)^2 a^0.
    pub a110: f64,
    /// alpha^2 eps int P~^2.
    pub predicted_a110: f64,
}

pub fn lc3_window_coefficients(base: &Control, gen: &VariationGenerator, eps: f64) -> Result<Lc3WindowCoefficients> {
    if gen.kind != VariationKind::Lc3 {
        return Err(CoreError::KindError("expected a step-3 generator".into()));
    }
    let w = gen.window(eps);
    let varied = gen.apply(base, eps)?;
    let prof = reflected_window_profile(base, &varied, gen.anchor, w)?;
    let table = CoefficientTable::new(&prof, 3)?;
    let s = table.end();
    let p = &gen.polys[0];
    Ok(Lc3WindowCoefficients {
        eps,
        a01: table.aa(0, 1, s),
        a001: table.aaa(0, 0, 1, s),
        a101: table.aaa(1, 0, 1, s),
        a110: table.aaa(1, 1, 0, s),
        predicted_a110: gen.alpha * gen.alpha * eps * rat_to_f64(&p.inner(p)),
    })
}
