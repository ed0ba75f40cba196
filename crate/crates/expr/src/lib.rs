//! A small expression language for closed-form field formulas.
//!
//! Expressions are parsed from text such as `1.5*x1^2 - abs(x2)/3`, can be
//! evaluated, differentiated symbolically, printed back to a form that parses
//! to the same tree, and queried for polynomial structure.

mod ast;
mod diff;
mod parse;

pub use ast::{Expr, Func};
pub use parse::{parse_condition, parse_expr, Condition, ParseError, Relation};
