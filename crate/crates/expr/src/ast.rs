use std::fmt;

/// Unary functions understood by the language.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Abs,
    Sign,
    Sqrt,
    Exp,
    Ln,
    Sin,
    Cos,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Abs => "abs",
            Func::Sign => "sign",
            Func::Sqrt => "sqrt",
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sin => "sin",
            Func::Cos => "cos",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "abs" => Func::Abs,
            "sign" => Func::Sign,
            "sqrt" => Func::Sqrt,
            "exp" => Func::Exp,
            "ln" | "log" => Func::Ln,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            _ => return None,
        })
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Abs => v.abs(),
            Func::Sign => {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Func::Sqrt => v.sqrt(),
            Func::Exp => v.exp(),
            Func::Ln => v.ln(),
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
        }
    }
}

/// Expression tree. Variables are referenced by index into the name table
/// used at parse time.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn zero() -> Expr {
        Expr::Num(0.0)
    }

    pub fn one() -> Expr {
        Expr::Num(1.0)
    }

    pub fn as_num(&self) -> Option<f64> {
        match self {
            Expr::Num(v) => Some(*v),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_num() == Some(0.0)
    }

    // Smart constructors with constant folding and trivial identities.

    pub fn neg(a: Expr) -> Expr {
        match a {
            Expr::Num(v) => Expr::Num(-v),
            Expr::Neg(inner) => *inner,
            other => Expr::Neg(Box::new(other)),
        }
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        match (a.as_num(), b.as_num()) {
            (Some(x), Some(y)) => Expr::Num(x + y),
            (Some(0.0), None) => b,
            (None, Some(0.0)) => a,
            _ => Expr::Add(Box::new(a), Box::new(b)),
        }
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        match (a.as_num(), b.as_num()) {
            (Some(x), Some(y)) => Expr::Num(x - y),
            (Some(0.0), None) => Expr::neg(b),
            (None, Some(0.0)) => a,
            _ => Expr::Sub(Box::new(a), Box::new(b)),
        }
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        match (a.as_num(), b.as_num()) {
            (Some(x), Some(y)) => Expr::Num(x * y),
            (Some(0.0), _) => Expr::zero(),
            (_, Some(0.0)) => Expr::zero(),
            (Some(1.0), _) => b,
            (_, Some(1.0)) => a,
            (Some(-1.0), _) => Expr::neg(b),
            (_, Some(-1.0)) => Expr::neg(a),
            _ => Expr::Mul(Box::new(a), Box::new(b)),
        }
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        match (a.as_num(), b.as_num()) {
            (Some(x), Some(y)) if y != 0.0 => Expr::Num(x / y),
            (Some(0.0), _) => Expr::zero(),
            (_, Some(1.0)) => a,
            _ => Expr::Div(Box::new(a), Box::new(b)),
        }
    }

    pub fn pow(a: Expr, b: Expr) -> Expr {
        match (a.as_num(), b.as_num()) {
            (Some(x), Some(y)) => Expr::Num(x.powf(y)),
            (_, Some(0.0)) => Expr::one(),
            (_, Some(1.0)) => a,
            _ => Expr::Pow(Box::new(a), Box::new(b)),
        }
    }

    pub fn call(f: Func, a: Expr) -> Expr {
        match a.as_num() {
            Some(v) => Expr::Num(f.apply(v)),
            None => Expr::Call(f, Box::new(a)),
        }
    }

    /// Evaluates the expression with `vars[k]` bound to variable `k`.
    pub fn eval(&self, vars: &[f64]) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Var(k) => vars[*k],
            Expr::Neg(a) => -a.eval(vars),
            Expr::Add(a, b) => a.eval(vars) + b.eval(vars),
            Expr::Sub(a, b) => a.eval(vars) - b.eval(vars),
            Expr::Mul(a, b) => a.eval(vars) * b.eval(vars),
            Expr::Div(a, b) => a.eval(vars) / b.eval(vars),
            Expr::Pow(a, b) => {
                let base = a.eval(vars);
                match b.as_num() {
                    Some(e) if e.fract() == 0.0 && e.abs() < 64.0 => base.powi(e as i32),
                    _ => base.powf(b.eval(vars)),
                }
            }
            Expr::Call(f, a) => f.apply(a.eval(vars)),
        }
    }

    /// Largest variable index used plus one (0 for constants).
    pub fn arity(&self) -> usize {
        match self {
            Expr::Num(_) => 0,
            Expr::Var(k) => k + 1,
            Expr::Neg(a) | Expr::Call(_, a) => a.arity(),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b) => a.arity().max(b.arity()),
        }
    }

    pub fn depends_on(&self, var: usize) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var(k) => *k == var,
            Expr::Neg(a) | Expr::Call(_, a) => a.depends_on(var),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b) => a.depends_on(var) || b.depends_on(var),
        }
    }

    pub fn contains_func(&self, func: Func) -> bool {
        match self {
            Expr::Num(_) | Expr::Var(_) => false,
            Expr::Call(f, a) => *f == func || a.contains_func(func),
            Expr::Neg(a) => a.contains_func(func),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b) => a.contains_func(func) || b.contains_func(func),
        }
    }

    /// Distinct arguments of `abs(..)` occurring in the tree, outermost first.
    pub fn abs_arguments(&self) -> Vec<Expr> {
        let mut out = Vec::new();
        self.collect_abs(&mut out);
        out
    }

    fn collect_abs(&self, out: &mut Vec<Expr>) {
        match self {
            Expr::Num(_) | Expr::Var(_) => {}
            Expr::Call(Func::Abs, a) => {
                if !out.contains(a) {
                    out.push((**a).clone());
                }
                a.collect_abs(out);
            }
            Expr::Neg(a) | Expr::Call(_, a) => a.collect_abs(out),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b) => {
                a.collect_abs(out);
                b.collect_abs(out);
            }
        }
    }

    /// Replaces `abs(arg)` by `arg` or `-arg` as chosen by `sign_of(arg)`
    /// (`true` = nonnegative branch). Only outermost occurrences matching
    /// an argument in the table are rewritten.
    pub fn resolve_abs(&self, sign_of: &dyn Fn(&Expr) -> Option<bool>) -> Expr {
        match self {
            Expr::Num(_) | Expr::Var(_) => self.clone(),
            Expr::Call(Func::Abs, a) => {
                let inner = a.resolve_abs(sign_of);
                match sign_of(a) {
                    Some(true) => inner,
                    Some(false) => Expr::neg(inner),
                    None => Expr::call(Func::Abs, inner),
                }
            }
            Expr::Call(f, a) => Expr::call(*f, a.resolve_abs(sign_of)),
            Expr::Neg(a) => Expr::neg(a.resolve_abs(sign_of)),
            Expr::Add(a, b) => Expr::add(a.resolve_abs(sign_of), b.resolve_abs(sign_of)),
            Expr::Sub(a, b) => Expr::sub(a.resolve_abs(sign_of), b.resolve_abs(sign_of)),
            Expr::Mul(a, b) => Expr::mul(a.resolve_abs(sign_of), b.resolve_abs(sign_of)),
            Expr::Div(a, b) => Expr::div(a.resolve_abs(sign_of), b.resolve_abs(sign_of)),
            Expr::Pow(a, b) => Expr::pow(a.resolve_abs(sign_of), b.resolve_abs(sign_of)),
        }
    }

    /// Substitutes variable `k` by `subs[k]`.
    pub fn substitute(&self, subs: &[Expr]) -> Expr {
        match self {
            Expr::Num(_) => self.clone(),
            Expr::Var(k) => subs[*k].clone(),
            Expr::Neg(a) => Expr::neg(a.substitute(subs)),
            Expr::Call(f, a) => Expr::call(*f, a.substitute(subs)),
            Expr::Add(a, b) => Expr::add(a.substitute(subs), b.substitute(subs)),
            Expr::Sub(a, b) => Expr::sub(a.substitute(subs), b.substitute(subs)),
            Expr::Mul(a, b) => Expr::mul(a.substitute(subs), b.substitute(subs)),
            Expr::Div(a, b) => Expr::div(a.substitute(subs), b.substitute(subs)),
            Expr::Pow(a, b) => Expr::pow(a.substitute(subs), b.substitute(subs)),
        }
    }

    /// Monomial coefficients if the expression is a polynomial in variable
    /// `var` alone (no other variables, integer nonnegative powers only).
    pub fn to_poly(&self, var: usize) -> Option<Vec<f64>> {
        fn trim(mut c: Vec<f64>) -> Vec<f64> {
            while c.len() > 1 && c[c.len() - 1] == 0.0 {
                c.pop();
            }
            c
        }
        fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
            let mut out = vec![0.0; a.len() + b.len() - 1];
            for (i, x) in a.iter().enumerate() {
                for (j, y) in b.iter().enumerate() {
                    out[i + j] += x * y;
                }
            }
            out
        }
        fn add(a: &[f64], b: &[f64], sign: f64) -> Vec<f64> {
            let mut out = vec![0.0; a.len().max(b.len())];
            for (i, x) in a.iter().enumerate() {
                out[i] += x;
            }
            for (i, y) in b.iter().enumerate() {
                out[i] += sign * y;
            }
            out
        }
        let c = match self {
            Expr::Num(v) => vec![*v],
            Expr::Var(k) if *k == var => vec![0.0, 1.0],
            Expr::Var(_) => return None,
            Expr::Neg(a) => a.to_poly(var)?.into_iter().map(|x| -x).collect(),
            Expr::Add(a, b) => add(&a.to_poly(var)?, &b.to_poly(var)?, 1.0),
            Expr::Sub(a, b) => add(&a.to_poly(var)?, &b.to_poly(var)?, -1.0),
            Expr::Mul(a, b) => mul(&a.to_poly(var)?, &b.to_poly(var)?),
            Expr::Div(a, b) => {
                let d = b.as_num()?;
                a.to_poly(var)?.into_iter().map(|x| x / d).collect()
            }
            Expr::Pow(a, b) => {
                let e = b.as_num()?;
                if e < 0.0 || e.fract() != 0.0 || e > 64.0 {
                    return None;
                }
                let base = a.to_poly(var)?;
                let mut acc = vec![1.0];
                for _ in 0..e as usize {
                    acc = mul(&acc, &base);
                }
                acc
            }
            Expr::Call(..) => return None,
        };
        Some(trim(c))
    }

    /// Builds the expression `Σ c_k v^k` in variable `var`.
    pub fn from_poly(coeffs: &[f64], var: usize) -> Expr {
        // Horner form keeps the tree shallow.
        let mut acc = Expr::zero();
        for c in coeffs.iter().rev() {
            acc = Expr::add(Expr::mul(acc, Expr::Var(var)), Expr::Num(*c));
        }
        acc
    }

    /// Renders with the given variable names.
    pub fn display<'a>(&'a self, names: &'a [String]) -> Display<'a> {
        Display { expr: self, names }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Pow(..) => 3,
            // Negations and negative literals are always parenthesised, so
            // they behave as atoms.
            Expr::Neg(_) | Expr::Num(_) | Expr::Var(_) | Expr::Call(..) => 4,
        }
    }
}

pub struct Display<'a> {
    expr: &'a Expr,
    names: &'a [String],
}

impl Display<'_> {
    fn child<'b>(&'b self, e: &'b Expr) -> Display<'b> {
        Display { expr: e, names: self.names }
    }

    fn write_operand(&self, f: &mut fmt::Formatter<'_>, e: &Expr, min_prec: u8) -> fmt::Result {
        if e.precedence() < min_prec {
            write!(f, "({})", self.child(e))
        } else {
            write!(f, "{}", self.child(e))
        }
    }
}

fn write_num(f: &mut fmt::Formatter<'_>, v: f64) -> fmt::Result {
    if v.is_nan() {
        write!(f, "(0/0)")
    } else if v.is_infinite() {
        if v > 0.0 {
            write!(f, "(1/0)")
        } else {
            write!(f, "(-1/0)")
        }
    } else if v < 0.0 || (v == 0.0 && v.is_sign_negative()) {
        write!(f, "(-{:?})", -v)
    } else {
        write!(f, "{:?}", v)
    }
}

impl fmt::Display for Display<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.expr {
            Expr::Num(v) => write_num(f, *v),
            Expr::Var(k) => match self.names.get(*k) {
                Some(n) => write!(f, "{n}"),
                None => write!(f, "x{}", k + 1),
            },
            Expr::Neg(a) => {
                write!(f, "(-")?;
                self.write_operand(f, a, 3)?;
                write!(f, ")")
            }
            Expr::Add(a, b) => {
                self.write_operand(f, a, 1)?;
                write!(f, " + ")?;
                self.write_operand(f, b, 2)
            }
            Expr::Sub(a, b) => {
                self.write_operand(f, a, 1)?;
                write!(f, " - ")?;
                self.write_operand(f, b, 2)
            }
            Expr::Mul(a, b) => {
                self.write_operand(f, a, 2)?;
                write!(f, "*")?;
                self.write_operand(f, b, 3)
            }
            Expr::Div(a, b) => {
                self.write_operand(f, a, 2)?;
                write!(f, "/")?;
                self.write_operand(f, b, 3)
            }
            Expr::Pow(a, b) => {
                // Right associative: the base needs parentheses at equal
                // precedence, the exponent does not.
                self.write_operand(f, a, 4)?;
                write!(f, "^")?;
                self.write_operand(f, b, 3)
            }
            Expr::Call(func, a) => write!(f, "{}({})", func.name(), self.child(a)),
        }
    }
}
