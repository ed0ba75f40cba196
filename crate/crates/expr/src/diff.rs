use crate::ast::{Expr, Func};

impl Expr {
    /// Symbolic partial derivative with respect to variable `var`.
    ///
    /// `abs` differentiates to `sign(arg)·arg'`; the caller is responsible
    /// for treating the kink set separately when it matters.
    pub fn derivative(&self, var: usize) -> Expr {
        match self {
            Expr::Num(_) => Expr::zero(),
            Expr::Var(k) => {
                if *k == var {
                    Expr::one()
                } else {
                    Expr::zero()
                }
            }
            Expr::Neg(a) => Expr::neg(a.derivative(var)),
            Expr::Add(a, b) => Expr::add(a.derivative(var), b.derivative(var)),
            Expr::Sub(a, b) => Expr::sub(a.derivative(var), b.derivative(var)),
            Expr::Mul(a, b) => Expr::add(
                Expr::mul(a.derivative(var), (**b).clone()),
                Expr::mul((**a).clone(), b.derivative(var)),
            ),
            Expr::Div(a, b) => {
                let da = a.derivative(var);
                let db = b.derivative(var);
                if db.is_zero() {
                    return Expr::div(da, (**b).clone());
                }
                Expr::div(
                    Expr::sub(
                        Expr::mul(da, (**b).clone()),
                        Expr::mul((**a).clone(), db),
                    ),
                    Expr::pow((**b).clone(), Expr::Num(2.0)),
                )
            }
            Expr::Pow(a, b) => {
                let da = a.derivative(var);
                if let Some(e) = b.as_num() {
                    // d(a^e) = e·a^(e-1)·a'
                    return Expr::mul(
                        Expr::mul(Expr::Num(e), Expr::pow((**a).clone(), Expr::Num(e - 1.0))),
                        da,
                    );
                }
                // d(a^b) = a^b·(b'·ln a + b·a'/a)
                let db = b.derivative(var);
                Expr::mul(
                    self.clone(),
                    Expr::add(
                        Expr::mul(db, Expr::call(Func::Ln, (**a).clone())),
                        Expr::div(Expr::mul((**b).clone(), da), (**a).clone()),
                    ),
                )
            }
            Expr::Call(f, a) => {
                let da = a.derivative(var);
                if da.is_zero() {
                    return Expr::zero();
                }
                let arg = (**a).clone();
                let outer = match f {
                    Func::Abs => Expr::call(Func::Sign, arg),
                    Func::Sign => return Expr::zero(),
                    Func::Sqrt => Expr::div(
                        Expr::Num(0.5),
                        Expr::call(Func::Sqrt, arg),
                    ),
                    Func::Exp => Expr::call(Func::Exp, arg),
                    Func::Ln => Expr::div(Expr::one(), arg),
                    Func::Sin => Expr::call(Func::Cos, arg),
                    Func::Cos => Expr::neg(Expr::call(Func::Sin, arg)),
                };
                Expr::mul(outer, da)
            }
        }
    }

    /// Gradient with respect to variables `0..n`.
    pub fn gradient(&self, n: usize) -> Vec<Expr> {
        (0..n).map(|k| self.derivative(k)).collect()
    }
}

#[cfg(test)]
mod tests {
    use crate::parse_expr;

    fn names(n: usize) -> Vec<String> {
        (1..=n).map(|k| format!("x{k}")).collect()
    }

    fn check(src: &str, var: usize, at: &[f64]) {
        let nm = names(at.len());
        let e = parse_expr(src, &nm).unwrap();
        let d = e.derivative(var);
        let h = 1e-6;
        let mut xp = at.to_vec();
        let mut xm = at.to_vec();
        xp[var] += h;
        xm[var] -= h;
        let fd = (e.eval(&xp) - e.eval(&xm)) / (2.0 * h);
        let an = d.eval(at);
        assert!(
            (fd - an).abs() <= 1e-6 * (1.0 + an.abs()),
            "{src}: analytic {an} vs central difference {fd}"
        );
    }

    #[test]
    fn derivatives_match_central_differences() {
        let at = [0.7, -0.3, 1.2];
        for src in [
            "1.5*x1^2 + x2*x3",
            "x1/x3 - x2^3",
            "sqrt(x3)*exp(x1)",
            "sin(x1*x2) + cos(x3)^2",
            "ln(x3 + 1) * x1",
            "abs(x2) * x1",
            "x3^x1",
            "-(x1 - x2)^2 / (1 + x3^2)",
        ] {
            for var in 0..3 {
                check(src, var, &at);
            }
        }
    }

    #[test]
    fn constants_fold() {
        let nm = names(2);
        let e = parse_expr("3*x1^2 + 5", &nm).unwrap();
        let d = e.derivative(1);
        assert!(d.is_zero());
        let d0 = e.derivative(0).derivative(0);
        assert_eq!(d0.eval(&[0.0, 0.0]), 6.0);
    }
}
