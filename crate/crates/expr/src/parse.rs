use thiserror::Error;

use crate::ast::{Expr, Func};

/// Parse failure with a 1-based line/column into the source text.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{line}:{column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

/// Comparison operator of a sign condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Less,
    LessEq,
    Greater,
    GreaterEq,
}

impl Relation {
    pub fn symbol(self) -> &'static str {
        match self {
            Relation::Less => "<",
            Relation::LessEq => "<=",
            Relation::Greater => ">",
            Relation::GreaterEq => ">=",
        }
    }
}

/// A sign condition `lhs REL rhs`, kept as `lhs - rhs REL 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub expr: Expr,
    pub relation: Relation,
}

impl Condition {
    pub fn holds(&self, vars: &[f64]) -> bool {
        let v = self.expr.eval(vars);
        match self.relation {
            Relation::Less => v < 0.0,
            Relation::LessEq => v <= 0.0,
            Relation::Greater => v > 0.0,
            Relation::GreaterEq => v >= 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    Rel(Relation),
    LParen,
    RParen,
    End,
}

struct Lexer<'a> {
    src: &'a str,
    toks: Vec<(Tok, usize)>,
}

fn position(src: &str, offset: usize) -> (usize, usize) {
    let mut line = 1;
    let mut col = 1;
    for (i, ch) in src.char_indices() {
        if i >= offset {
            break;
        }
        if ch == '\n' {
            line += 1;
            col = 1;
        } else {
            col += 1;
        }
    }
    (line, col)
}

fn err(src: &str, offset: usize, message: impl Into<String>) -> ParseError {
    let (line, column) = position(src, offset);
    ParseError { line, column, message: message.into() }
}

impl<'a> Lexer<'a> {
    fn run(src: &'a str) -> Result<Vec<(Tok, usize)>, ParseError> {
        let mut lx = Lexer { src, toks: Vec::new() };
        let bytes = src.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            let c = bytes[i] as char;
            if c.is_whitespace() {
                i += 1;
                continue;
            }
            let start = i;
            if c.is_ascii_digit() || c == '.' {
                while i < bytes.len() && ((bytes[i] as char).is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && (bytes[j] as char).is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text = &src[start..i];
                let v: f64 = text
                    .parse()
                    .map_err(|_| err(src, start, format!("malformed number '{text}'")))?;
                lx.toks.push((Tok::Num(v), start));
                continue;
            }
            if c.is_ascii_alphabetic() || c == '_' {
                while i < bytes.len() && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                lx.toks.push((Tok::Ident(src[start..i].to_string()), start));
                continue;
            }
            let next = bytes.get(i + 1).map(|b| *b as char);
            let tok = match (c, next) {
                ('<', Some('=')) => {
                    i += 1;
                    Tok::Rel(Relation::LessEq)
                }
                ('>', Some('=')) => {
                    i += 1;
                    Tok::Rel(Relation::GreaterEq)
                }
                ('<', _) => Tok::Rel(Relation::Less),
                ('>', _) => Tok::Rel(Relation::Greater),
                ('*', Some('*')) => {
                    i += 1;
                    Tok::Op('^')
                }
                ('+' | '-' | '*' | '/' | '^', _) => Tok::Op(c),
                ('(', _) => Tok::LParen,
                (')', _) => Tok::RParen,
                _ => return Err(err(src, start, format!("unexpected character '{c}'"))),
            };
            i += 1;
            lx.toks.push((tok, start));
        }
        lx.toks.push((Tok::End, lx.src.len()));
        Ok(lx.toks)
    }
}

struct Parser<'a> {
    src: &'a str,
    toks: Vec<(Tok, usize)>,
    pos: usize,
    names: &'a [String],
}

impl<'a> Parser<'a> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, message: impl Into<String>) -> ParseError {
        err(self.src, self.offset(), message)
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Tok::Op('+') => {
                    self.bump();
                    lhs = Expr::add(lhs, self.term()?);
                }
                Tok::Op('-') => {
                    self.bump();
                    lhs = Expr::sub(lhs, self.term()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Tok::Op('*') => {
                    self.bump();
                    lhs = Expr::mul(lhs, self.unary()?);
                }
                Tok::Op('/') => {
                    self.bump();
                    lhs = Expr::div(lhs, self.unary()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Tok::Op('-') => {
                self.bump();
                Ok(Expr::neg(self.unary()?))
            }
            Tok::Op('+') => {
                self.bump();
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if let Tok::Op('^') = self.peek() {
            self.bump();
            let exponent = self.unary()?;
            return Ok(Expr::pow(base, exponent));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let at = self.offset();
        match self.bump() {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::LParen => {
                let inner = self.expr()?;
                match self.bump() {
                    Tok::RParen => Ok(inner),
                    _ => Err(err(self.src, self.toks[self.pos.saturating_sub(1)].1, "expected ')'")),
                }
            }
            Tok::Ident(name) => {
                if let Tok::LParen = self.peek() {
                    let func = Func::from_name(&name)
                        .ok_or_else(|| err(self.src, at, format!("unknown function '{name}'")))?;
                    self.bump();
                    let arg = self.expr()?;
                    match self.bump() {
                        Tok::RParen => Ok(Expr::call(func, arg)),
                        _ => Err(err(self.src, self.toks[self.pos.saturating_sub(1)].1, "expected ')'")),
                    }
                } else if let Some(k) = self.names.iter().position(|n| *n == name) {
                    Ok(Expr::Var(k))
                } else if name == "pi" {
                    Ok(Expr::Num(std::f64::consts::PI))
                } else {
                    Err(err(self.src, at, format!("unknown variable '{name}'")))
                }
            }
            Tok::End => Err(err(self.src, at, "unexpected end of expression")),
            other => Err(err(self.src, at, format!("unexpected token {other:?}"))),
        }
    }
}

/// Parses an expression over the given variable names.
pub fn parse_expr(src: &str, names: &[String]) -> Result<Expr, ParseError> {
    let toks = Lexer::run(src)?;
    let mut p = Parser { src, toks, pos: 0, names };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return Err(p.error("trailing input"));
    }
    Ok(e)
}

/// Parses a sign condition such as `x1 < 0` or `x2 - x1^2 >= 1`.
pub fn parse_condition(src: &str, names: &[String]) -> Result<Condition, ParseError> {
    let toks = Lexer::run(src)?;
    let mut p = Parser { src, toks, pos: 0, names };
    let lhs = p.expr()?;
    let relation = match p.bump() {
        Tok::Rel(r) => r,
        _ => {
            p.pos = p.pos.saturating_sub(1);
            return Err(p.error("expected one of <, <=, >, >="));
        }
    };
    let rhs = p.expr()?;
    if *p.peek() != Tok::End {
        return Err(p.error("trailing input"));
    }
    Ok(Condition { expr: Expr::sub(lhs, rhs), relation })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names() -> Vec<String> {
        vec!["x1".into(), "x2".into(), "x3".into()]
    }

    #[test]
    fn precedence_and_associativity() {
        let n = names();
        let e = parse_expr("2 + 3*x1^2^1 - x2/2", &n).unwrap();
        assert_eq!(e.eval(&[2.0, 4.0, 0.0]), 2.0 + 12.0 - 2.0);
        let e = parse_expr("-x1^2", &n).unwrap();
        assert_eq!(e.eval(&[3.0, 0.0, 0.0]), -9.0);
        let e = parse_expr("2^-1", &n).unwrap();
        assert_eq!(e.eval(&[0.0; 3]), 0.5);
        let e = parse_expr("x1 - x2 - x3", &n).unwrap();
        assert_eq!(e.eval(&[1.0, 2.0, 3.0]), -4.0);
        let e = parse_expr("1.5e-1*x1**2", &n).unwrap();
        assert!((e.eval(&[2.0, 0.0, 0.0]) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn errors_carry_positions() {
        let n = names();
        let e = parse_expr("x1 +\n  * x2", &n).unwrap_err();
        assert_eq!((e.line, e.column), (2, 3));
        let e = parse_expr("y + 1", &n).unwrap_err();
        assert_eq!((e.line, e.column), (1, 1));
        assert!(e.message.contains("unknown variable"));
        assert!(parse_expr("", &n).is_err());
        assert!(parse_expr("(x1", &n).is_err());
        assert!(parse_expr("foo(x1)", &n).is_err());
    }

    #[test]
    fn conditions() {
        let n = names();
        let c = parse_condition("x1 < 0", &n).unwrap();
        assert!(c.holds(&[-1.0, 0.0, 0.0]));
        assert!(!c.holds(&[0.0, 0.0, 0.0]));
        let c = parse_condition("x2 >= x1^2", &n).unwrap();
        assert!(c.holds(&[1.0, 1.0, 0.0]));
        assert!(parse_condition("x1 + 1", &n).is_err());
    }

    #[test]
    fn printing_reparses() {
        let n = names();
        for src in [
            "-(x1*x2)",
            "(-2)*x1",
            "x1^(-2)",
            "(x1^2)^3",
            "x1 - (x2 - x3)",
            "x1/(x2*x3)",
            "abs(x1 - 1)*sign(x2)",
            "-x1^2 + 1e-12",
        ] {
            let e = parse_expr(src, &n).unwrap();
            let printed = e.display(&n).to_string();
            let again = parse_expr(&printed, &n).unwrap();
            assert_eq!(e, again, "{src} printed as {printed}");
        }
    }

    #[test]
    fn polynomial_extraction() {
        let n = vec!["t".to_string()];
        let e = parse_expr("5*t^4 - 10*t^3 + 6*t^2 - t", &n).unwrap();
        assert_eq!(e.to_poly(0).unwrap(), vec![0.0, -1.0, 6.0, -10.0, 5.0]);
        let e = parse_expr("sin(t)", &n).unwrap();
        assert!(e.to_poly(0).is_none());
        let back = Expr::from_poly(&[1.0, 2.0, 3.0], 0);
        assert_eq!(back.eval(&[2.0]), 17.0);
    }
}
