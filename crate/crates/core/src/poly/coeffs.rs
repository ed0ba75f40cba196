//! Iterated integrals of a control profile: A^h, A^{ji}, A^{kji} and the
//! Chen word coefficients up to length 3.

use nalgebra::DVector;

use super::real::ScaledPoly;
use crate::error::{CoreError, Result};
use crate::ode::{integrate, OdeOptions, Solution};
use crate::system::control::Control;

#[derive(Debug, Clone)]
enum SegmentData {
    /// One local polynomial per word.
    Closed(Vec<ScaledPoly>),
    Numeric(Solution),
}

#[derive(Debug, Clone)]
struct Segment {
    start: f64,
    end: f64,
    data: SegmentData,
}

/// Chen coefficients of a profile (a^0, ..., a^{L-1}) on [t0, t1]:
/// c_a(s) = int a^a, c_{ab}(s) = int c_a a^b, c_{abc}(s) = int c_{ab} a^c.
#[derive(Debug, Clone)]
pub struct CoefficientTable {
    letters: usize,
    order: usize,
    segments: Vec<Segment>,
}

impl CoefficientTable {
    /// Builds the table; polynomial pieces are integrated in closed form,
    /// others by a tight Runge–Kutta solve of the Chen equation.
    pub fn new(profile: &Control, order: usize) -> Result<CoefficientTable> {
        if !(1..=3).contains(&order) {
            return Err(CoreError::DimensionError(format!("coefficient order must be 1, 2 or 3, got {order}")));
        }
        let l = profile.m;
        let nw = word_count(l, order);
        let mut state = vec![0.0; nw];
        let mut segments = Vec::with_capacity(profile.pieces.len());
        for piece in &profile.pieces {
            let (a, b) = (piece.start, piece.end);
            let len = b - a;
            if piece.channels.iter().all(|c| c.is_polynomial()) {
                let p: Vec<ScaledPoly> = piece.channels.iter().map(|c| c.poly.rebase(a, len)).collect();
                let mut polys = vec![ScaledPoly::zero(a, len); nw];
                for x in 0..l {
                    polys[x] = p[x].antiderivative().add_constant(state[x]);
                }
                if order >= 2 {
                    for x in 0..l {
                        for y in 0..l {
                            let w = index2(l, x, y);
                            polys[w] = polys[x].mul(&p[y]).antiderivative().add_constant(state[w]);
                        }
                    }
                }
                if order >= 3 {
                    for x in 0..l {
                        for y in 0..l {
                            let wxy = index2(l, x, y);
                            for z in 0..l {
                                let w = index3(l, x, y, z);
                                polys[w] = polys[wxy].mul(&p[z]).antiderivative().add_constant(state[w]);
                            }
                        }
                    }
                }
                for (k, s) in state.iter_mut().enumerate() {
                    *s = polys[k].eval_local(1.0);
                }
                segments.push(Segment { start: a, end: b, data: SegmentData::Closed(polys) });
            } else {
                let opts = OdeOptions { rtol: 1e-12, atol: 1e-15, ..Default::default() };
                let rhs = |t: f64, y: &DVector<f64>| {
                    let av: Vec<f64> = piece.channels.iter().map(|c| c.eval(t)).collect();
                    let mut d = DVector::zeros(nw);
                    for x in 0..l {
                        d[x] = av[x];
                    }
                    if order >= 2 {
                        for x in 0..l {
                            for z in 0..l {
                                d[index2(l, x, z)] = y[x] * av[z];
                            }
                        }
                    }
                    if order >= 3 {
                        for x in 0..l {
                            for yy in 0..l {
                                for z in 0..l {
                                    d[index3(l, x, yy, z)] = y[index2(l, x, yy)] * av[z];
                                }
                            }
                        }
                    }
                    d
                };
                let sol = integrate(rhs, a, DVector::from_vec(state.clone()), b, &opts, |_| None)?;
                state = sol.y_end.iter().cloned().collect();
                segments.push(Segment { start: a, end: b, data: SegmentData::Numeric(sol) });
            }
        }
        Ok(CoefficientTable { letters: l, order, segments })
    }

    pub fn letters(&self) -> usize {
        self.letters
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn start(&self) -> f64 {
        self.segments[0].start
    }

    pub fn end(&self) -> f64 {
        self.segments.last().expect("nonempty").end
    }

    /// All word coefficients at s (lengths 1..=order, lexicographic within
    /// each length).
    pub fn all_words(&self, s: f64) -> Vec<f64> {
        let k = self.segments.partition_point(|g| g.end < s).min(self.segments.len() - 1);
        let seg = &self.segments[k];
        match &seg.data {
            SegmentData::Closed(polys) => polys.iter().map(|p| p.eval(s.clamp(seg.start, seg.end))).collect(),
            SegmentData::Numeric(sol) => sol.eval(s.clamp(seg.start, seg.end)).iter().cloned().collect(),
        }
    }

    /// Chen coefficient of a word of length 1..=order.
    pub fn word(&self, w: &[usize], s: f64) -> f64 {
        let l = self.letters;
        let idx = match w {
            [a] => *a,
            [a, b] => index2(l, *a, *b),
            [a, b, c] => index3(l, *a, *b, *c),
            _ => panic!("word length must be 1..=3"),
        };
        assert!(w.len() <= self.order, "word longer than table order");
        self.all_words(s)[idx]
    }

    /// A^h(s).
    pub fn a(&self, h: usize, s: f64) -> f64 {
        self.word(&[h], s)
    }

    /// A^{ji}(s) = int A^j a^i.
    pub fn aa(&self, j: usize, i: usize, s: f64) -> f64 {
        self.word(&[j, i], s)
    }

    /// A^{kji}(s) = int A^k A^j a^i; by the shuffle identity this is
    /// c_{kji} + c_{jki}.
    pub fn aaa(&self, k: usize, j: usize, i: usize, s: f64) -> f64 {
        self.word(&[k, j, i], s) + self.word(&[j, k, i], s)
    }

    /// Instantaneous letter values a(s), used for derivative checks.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.segments.iter().map(|s| s.start).collect();
        v.push(self.end());
        v
    }
}

pub fn word_count(l: usize, order: usize) -> usize {
    (1..=order).map(|k| l.pow(k as u32)).sum()
}

fn index2(l: usize, a: usize, b: usize) -> usize {
    l + a * l + b
}

fn index3(l: usize, a: usize, b: usize, c: usize) -> usize {
    l + l * l + (a * l + b) * l + c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::control::{Channel, ControlPiece};
    use nsgoh_expr::parse_expr;

    #[test]
    fn monomial_profile_closed_form() {
        // a0 = 1, a1 = s on [0, 2]: A^0 = s, A^1 = s^2/2, A^{01} = s^3/3,
        // A^{10} = s^3/6, A^{011} = int s * s * s ... etc.
        let p = Control::new(
            2,
            vec![ControlPiece {
                start: 0.0,
                end: 2.0,
                channels: vec![
                    Channel::poly(ScaledPoly::constant(0.0, 2.0, 1.0)),
                    Channel::poly(ScaledPoly::new(0.0, 2.0, vec![0.0, 2.0])),
                ],
            }],
        )
        .unwrap();
        let t = CoefficientTable::new(&p, 3).unwrap();
        let s: f64 = 1.3;
        assert!((t.a(0, s) - s).abs() < 1e-14);
        assert!((t.a(1, s) - s * s / 2.0).abs() < 1e-14);
        assert!((t.aa(0, 1, s) - s.powi(3) / 3.0).abs() < 1e-14);
        assert!((t.aa(1, 0, s) - s.powi(3) / 6.0).abs() < 1e-14);
        // int A^0 A^0 a^1 = int s^3 = s^4/4
        assert!((t.aaa(0, 0, 1, s) - s.powi(4) / 4.0).abs() < 1e-14);
    }

    #[test]
    fn numeric_pieces_agree_with_closed_form() {
        let names = vec!["t".to_string()];
        let mk = |src: &str| {
            let e = parse_expr(src, &names).unwrap();
            Channel::expr(e, 0.0, 1.0)
        };
        let sin = Control::new(2, vec![ControlPiece { start: 0.0, end: 1.0, channels: vec![mk("1"), mk("sin(t)")] }]).unwrap();
        let t = CoefficientTable::new(&sin, 2).unwrap();
        // A^{01}(1) = int_0^1 s sin s ds = sin 1 - cos 1
        assert!((t.aa(0, 1, 1.0) - (1f64.sin() - 1f64.cos())).abs() < 1e-10);
        assert!((t.a(1, 0.5) - (1.0 - 0.5f64.cos())).abs() < 1e-10);
    }

    #[test]
    fn continuity_across_pieces() {
        let u = Control::new(
            1,
            vec![ControlPiece::constant(0.0, 1.0, &[1.0]), ControlPiece::constant(1.0, 2.0, &[-1.0])],
        )
        .unwrap();
        let t = CoefficientTable::new(&u, 2).unwrap();
        assert!((t.a(0, 2.0)).abs() < 1e-15);
        // A^{00} = (A^0)^2 / 2
        assert!((t.aa(0, 0, 1.5) - 0.5 * 0.5f64.powi(2)).abs() < 1e-15);
    }
}
