//! Convex hulls in V-representation with distance and support queries.

use nalgebra::{DMatrix, DVector};

use crate::error::{CoreError, Result};

/// Convex hull of finitely many points of R^d.
#[derive(Debug, Clone, PartialEq)]
pub struct Hull {
    pub dim: usize,
    pub vertices: Vec<DVector<f64>>,
}

impl Hull {
    pub fn new(vertices: Vec<DVector<f64>>) -> Result<Hull> {
        let dim = match vertices.first() {
            Some(v) => v.len(),
            None => return Err(CoreError::DimensionError("empty hull".into())),
        };
        if vertices.iter().any(|v| v.len() != dim) {
            return Err(CoreError::DimensionError("hull vertices of mixed dimension".into()));
        }
        let mut out: Vec<DVector<f64>> = Vec::with_capacity(vertices.len());
        for v in vertices {
            if !out.iter().any(|w| (w - &v).amax() <= 1e-15 * (1.0 + v.amax())) {
                out.push(v);
            }
        }
        Ok(Hull { dim, vertices: out })
    }

    pub fn singleton(v: DVector<f64>) -> Hull {
        Hull { dim: v.len(), vertices: vec![v] }
    }

    /// Hull of matrices, flattened row-major.
    pub fn from_matrices(ms: &[DMatrix<f64>]) -> Result<Hull> {
        Hull::new(ms.iter().map(flatten).collect())
    }

    pub fn distance(&self, p: &DVector<f64>) -> f64 {
        let shifted: Vec<DVector<f64>> = self.vertices.iter().map(|v| v - p).collect();
        min_norm_point(&shifted).norm()
    }

    /// Nearest point of the hull to `p`.
    pub fn project(&self, p: &DVector<f64>) -> DVector<f64> {
        let shifted: Vec<DVector<f64>> = self.vertices.iter().map(|v| v - p).collect();
        min_norm_point(&shifted) + p
    }

    pub fn contains(&self, p: &DVector<f64>, tol: f64) -> bool {
        self.distance(p) <= tol
    }

    /// Support function h(d) = max over the hull of d·v.
    pub fn support(&self, d: &DVector<f64>) -> f64 {
        self.vertices.iter().map(|v| v.dot(d)).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Image interval {p·v : v in hull}.
    pub fn dot_interval(&self, p: &DVector<f64>) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in &self.vertices {
            let d = p.dot(v);
            lo = lo.min(d);
            hi = hi.max(d);
        }
        (lo, hi)
    }

    pub fn diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        for (i, a) in self.vertices.iter().enumerate() {
            for b in &self.vertices[i + 1..] {
                d = d.max((a - b).norm());
            }
        }
        d
    }

    /// Hausdorff distance between two hulls. The maximum distance from a
    /// convex set to a convex set is attained at a vertex.
    pub fn hausdorff(&self, other: &Hull) -> f64 {
        let a = self.vertices.iter().map(|v| other.distance(v)).fold(0.0, f64::max);
        let b = other.vertices.iter().map(|v| self.distance(v)).fold(0.0, f64::max);
        a.max(b)
    }

    pub fn map(&self, f: impl Fn(&DVector<f64>) -> DVector<f64>) -> Hull {
        Hull::new(self.vertices.iter().map(f).collect()).expect("nonempty")
    }

    pub fn centroid(&self) -> DVector<f64> {
        let mut c = DVector::zeros(self.dim);
        for v in &self.vertices {
            c += v;
        }
        c / self.vertices.len() as f64
    }
}

pub fn flatten(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.len(), m.transpose().iter().cloned())
}

pub fn unflatten(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, v.as_slice())
}

/// Affine minimiser of |sum mu_i p_i| subject to sum mu_i = 1.
fn affine_min(points: &[DVector<f64>], set: &[usize]) -> Vec<f64> {
    let k = set.len();
    let mut a = DMatrix::zeros(k + 1, k + 1);
    let mut b = DVector::zeros(k + 1);
    for (r, &i) in set.iter().enumerate() {
        for (c, &j) in set.iter().enumerate() {
            a[(r, c)] = points[i].dot(&points[j]);
        }
        a[(r, k)] = 1.0;
        a[(k, r)] = 1.0;
    }
    b[k] = 1.0;
    let scale = a.amax().max(1e-300);
    let svd = (a / scale).svd(true, true);
    let sol = svd.solve(&(b / scale), 1e-13).unwrap_or_else(|_| DVector::from_element(k + 1, 1.0 / k as f64));
    (0..k).map(|r| sol[r]).collect()
}

fn combine(points: &[DVector<f64>], set: &[usize], w: &[f64]) -> DVector<f64> {
    let mut x = DVector::zeros(points[0].len());
    for (&i, &wi) in set.iter().zip(w) {
        x += &points[i] * wi;
    }
    x
}

/// Wolfe's algorithm for the minimum-norm point of conv(points).
pub fn min_norm_point(points: &[DVector<f64>]) -> DVector<f64> {
    let maxn2 = points.iter().map(|p| p.norm_squared()).fold(0.0, f64::max);
    if maxn2 == 0.0 {
        return points[0].clone();
    }
    let start = (0..points.len())
        .min_by(|&a, &b| points[a].norm_squared().total_cmp(&points[b].norm_squared()))
        .unwrap();
    let mut set = vec![start];
    let mut w = vec![1.0];
    let mut x = points[start].clone();
    let zero_w = 1e-14;
    for _ in 0..(50 * points.len() + 100) {
        let xx = x.norm_squared();
        let (j, best) = (0..points.len())
            .map(|j| (j, x.dot(&points[j])))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if xx - best <= 1e-14 * maxn2 || set.contains(&j) {
            break;
        }
        set.push(j);
        w.push(0.0);
        loop {
            let mu = affine_min(points, &set);
            if mu.iter().all(|&m| m > zero_w) {
                w = mu;
                x = combine(points, &set, &w);
                break;
            }
            let mut theta: f64 = 1.0;
            for (wi, mi) in w.iter().zip(&mu) {
                if *mi <= zero_w && wi - mi > 0.0 {
                    theta = theta.min(wi / (wi - mi));
                }
            }
            for (wi, mi) in w.iter_mut().zip(&mu) {
                *wi = theta * mi + (1.0 - theta) * *wi;
            }
            let mut k = 0;
            while k < set.len() {
                if w[k] <= zero_w {
                    set.remove(k);
                    w.remove(k);
                } else {
                    k += 1;
                }
            }
            if set.is_empty() {
                set.push(j);
                w.push(1.0);
            }
            let total: f64 = w.iter().sum();
            for wi in w.iter_mut() {
                *wi /= total;
            }
            x = combine(points, &set, &w);
            if set.len() == 1 {
                break;
            }
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn interval_distances() {
        let seg = Hull::new(vec![v(&[-1.0]), v(&[1.0])]).unwrap();
        assert_eq!(seg.distance(&v(&[0.0])), 0.0);
        let far = Hull::new(vec![v(&[2.0]), v(&[3.0])]).unwrap();
        assert!((far.distance(&v(&[0.0])) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn triangle_membership_matches_grid() {
        let tri = Hull::new(vec![v(&[0.0, 0.0]), v(&[2.0, 0.0]), v(&[0.0, 2.0])]).unwrap();
        assert!(tri.distance(&v(&[1.0, 1.0])) < 1e-10);
        // brute force: closest point on a fine sampling of the triangle
        let p = v(&[2.0, 2.0]);
        let mut best = f64::INFINITY;
        let n = 400;
        for a in 0..=n {
            for b in 0..=(n - a) {
                let q = v(&[2.0 * a as f64 / n as f64, 2.0 * b as f64 / n as f64]);
                best = best.min((&q - &p).norm());
            }
        }
        assert!((tri.distance(&p) - best).abs() < 1e-2);
        assert!((tri.distance(&p) - 2f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn vertices_have_zero_distance() {
        let h = Hull::new(vec![v(&[1.0, 2.0, 0.0]), v(&[-1.0, 0.5, 3.0]), v(&[0.0, 0.0, 1.0]), v(&[4.0, -2.0, 1.0])])
            .unwrap();
        for p in &h.vertices {
            assert!(h.distance(p) < 1e-12);
        }
    }

    #[test]
    fn hausdorff_of_segments() {
        let a = Hull::new(vec![v(&[0.0, -3.0]), v(&[0.0, -2.0])]).unwrap();
        let b = Hull::new(vec![v(&[0.0, -3.0]), v(&[0.0, -2.1])]).unwrap();
        assert!((a.hausdorff(&b) - 0.1).abs() < 1e-12);
        assert_eq!(a.diameter(), 1.0);
    }
}
