//! A tiny closed-form expression grammar over chart coordinates.
//!
//! Grammar: `+`, `-`, `*`, `/`, `cos`, `sin`, `exp`, numeric literals, the
//! constant `pi`, coordinates `x0..x{n-1}` and parentheses. Differentiation is
//! symbolic, so gradients and Hessians of configured potentials are exact.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::num;

#[derive(Debug, Clone, PartialEq)]
pub struct ExprError {
    pub message: String,
    pub position: usize,
}

impl fmt::Display for ExprError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "expression error at byte {}: {}", self.position, self.message)
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ExprError {}

#[derive(Debug, Clone, PartialEq)]
enum Ast {
    Const(f64),
    Coord(usize),
    Neg(Box<Ast>),
    Add(Box<Ast>, Box<Ast>),
    Sub(Box<Ast>, Box<Ast>),
    Mul(Box<Ast>, Box<Ast>),
    Div(Box<Ast>, Box<Ast>),
    Cos(Box<Ast>),
    Sin(Box<Ast>),
    Exp(Box<Ast>),
}

impl Ast {
    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Ast::Const(c) => *c,
            Ast::Coord(i) => x[*i],
            Ast::Neg(a) => -a.eval(x),
            Ast::Add(a, b) => a.eval(x) + b.eval(x),
            Ast::Sub(a, b) => a.eval(x) - b.eval(x),
            Ast::Mul(a, b) => a.eval(x) * b.eval(x),
            Ast::Div(a, b) => a.eval(x) / b.eval(x),
            Ast::Cos(a) => num::cos(a.eval(x)),
            Ast::Sin(a) => num::sin(a.eval(x)),
            Ast::Exp(a) => num::exp(a.eval(x)),
        }
    }

    fn max_coord(&self) -> Option<usize> {
        match self {
            Ast::Const(_) => None,
            Ast::Coord(i) => Some(*i),
            Ast::Neg(a) | Ast::Cos(a) | Ast::Sin(a) | Ast::Exp(a) => a.max_coord(),
            Ast::Add(a, b) | Ast::Sub(a, b) | Ast::Mul(a, b) | Ast::Div(a, b) => {
                match (a.max_coord(), b.max_coord()) {
                    (None, m) | (m, None) => m,
                    (Some(i), Some(j)) => Some(i.max(j)),
                }
            }
        }
    }

    fn differentiate(&self, i: usize) -> Ast {
        match self {
            Ast::Const(_) => Ast::Const(0.0),
            Ast::Coord(j) => Ast::Const(if *j == i { 1.0 } else { 0.0 }),
            Ast::Neg(a) => simp_neg(a.differentiate(i)),
            Ast::Add(a, b) => simp_add(a.differentiate(i), b.differentiate(i)),
            Ast::Sub(a, b) => simp_sub(a.differentiate(i), b.differentiate(i)),
            Ast::Mul(a, b) => simp_add(
                simp_mul(a.differentiate(i), (**b).clone()),
                simp_mul((**a).clone(), b.differentiate(i)),
            ),
            Ast::Div(a, b) => {
                // (a/b)' = a'/b - a b' / b^2
                let da = a.differentiate(i);
                let db = b.differentiate(i);
                simp_sub(
                    simp_div(da, (**b).clone()),
                    simp_div(
                        simp_mul((**a).clone(), db),
                        simp_mul((**b).clone(), (**b).clone()),
                    ),
                )
            }
            Ast::Cos(a) => simp_neg(simp_mul(Ast::Sin((*a).clone()), a.differentiate(i))),
            Ast::Sin(a) => simp_mul(Ast::Cos((*a).clone()), a.differentiate(i)),
            Ast::Exp(a) => simp_mul(Ast::Exp((*a).clone()), a.differentiate(i)),
        }
    }

    fn is_zero(&self) -> bool {
        matches!(self, Ast::Const(c) if *c == 0.0)
    }

    fn is_one(&self) -> bool {
        matches!(self, Ast::Const(c) if *c == 1.0)
    }
}

fn simp_neg(a: Ast) -> Ast {
    match a {
        Ast::Const(c) => Ast::Const(-c),
        Ast::Neg(inner) => *inner,
        other => Ast::Neg(Box::new(other)),
    }
}

fn simp_add(a: Ast, b: Ast) -> Ast {
    if a.is_zero() {
        return b;
    }
    if b.is_zero() {
        return a;
    }
    if let (Ast::Const(x), Ast::Const(y)) = (&a, &b) {
        return Ast::Const(x + y);
    }
    Ast::Add(Box::new(a), Box::new(b))
}

fn simp_sub(a: Ast, b: Ast) -> Ast {
    if b.is_zero() {
        return a;
    }
    if a.is_zero() {
        return simp_neg(b);
    }
    if let (Ast::Const(x), Ast::Const(y)) = (&a, &b) {
        return Ast::Const(x - y);
    }
    Ast::Sub(Box::new(a), Box::new(b))
}

fn simp_mul(a: Ast, b: Ast) -> Ast {
    if a.is_zero() || b.is_zero() {
        return Ast::Const(0.0);
    }
    if a.is_one() {
        return b;
    }
    if b.is_one() {
        return a;
    }
    if let (Ast::Const(x), Ast::Const(y)) = (&a, &b) {
        return Ast::Const(x * y);
    }
    Ast::Mul(Box::new(a), Box::new(b))
}

fn simp_div(a: Ast, b: Ast) -> Ast {
    if a.is_zero() {
        return Ast::Const(0.0);
    }
    if b.is_one() {
        return a;
    }
    if let (Ast::Const(x), Ast::Const(y)) = (&a, &b) {
        return Ast::Const(x / y);
    }
    Ast::Div(Box::new(a), Box::new(b))
}

/// A parsed scalar field with cached symbolic gradient and Hessian.
#[derive(Debug, Clone)]
pub struct ScalarField {
    src: String,
    ast: Ast,
    grad: Vec<Ast>,
    hess: Vec<Vec<Ast>>,
    needed_dim: usize,
}

impl ScalarField {
    pub fn parse(src: &str) -> Result<Self, ExprError> {
        let ast = Parser::new(src).parse()?;
        let needed_dim = ast.max_coord().map(|i| i + 1).unwrap_or(0);
        let grad: Vec<Ast> = (0..needed_dim).map(|i| ast.differentiate(i)).collect();
        let hess = (0..needed_dim)
            .map(|i| (0..needed_dim).map(|j| grad[i].differentiate(j)).collect())
            .collect();
        Ok(ScalarField { src: src.to_string(), ast, grad, hess, needed_dim })
    }

    pub fn src(&self) -> &str {
        &self.src
    }

    /// Smallest chart dimension the field can be evaluated on.
    pub fn needed_dim(&self) -> usize {
        self.needed_dim
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.ast.eval(x)
    }

    /// Gradient padded with zeros up to `x.len()`.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = alloc::vec![0.0; x.len()];
        for (i, d) in self.grad.iter().enumerate() {
            g[i] = d.eval(x);
        }
        g
    }

    /// Dense symmetric Hessian, padded with zeros up to `x.len()`.
    pub fn hessian(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let n = x.len();
        let mut h = alloc::vec![alloc::vec![0.0; n]; n];
        for i in 0..self.needed_dim {
            for j in 0..self.needed_dim {
                h[i][j] = self.hess[i][j].eval(x);
            }
        }
        h
    }
}

impl PartialEq for ScalarField {
    fn eq(&self, other: &Self) -> bool {
        self.src == other.src
    }
}

#[cfg(feature = "serde")]
impl serde::Serialize for ScalarField {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.src)
    }
}

#[cfg(feature = "serde")]
impl<'de> serde::Deserialize<'de> for ScalarField {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let src = String::deserialize(deserializer)?;
        ScalarField::parse(&src).map_err(serde::de::Error::custom)
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Parser { src: src.as_bytes(), pos: 0 }
    }

    fn parse(mut self) -> Result<Ast, ExprError> {
        let e = self.expr()?;
        self.skip_ws();
        if self.pos != self.src.len() {
            return Err(self.error("trailing input"));
        }
        Ok(e)
    }

    fn error(&self, message: &str) -> ExprError {
        ExprError { message: message.to_string(), position: self.pos }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<Ast, ExprError> {
        let mut acc = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    acc = Ast::Add(Box::new(acc), Box::new(rhs));
                }
                Some(b'-') => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    acc = Ast::Sub(Box::new(acc), Box::new(rhs));
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<Ast, ExprError> {
        let mut acc = self.factor()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    let rhs = self.factor()?;
                    acc = Ast::Mul(Box::new(acc), Box::new(rhs));
                }
                Some(b'/') => {
                    self.pos += 1;
                    let rhs = self.factor()?;
                    acc = Ast::Div(Box::new(acc), Box::new(rhs));
                }
                _ => return Ok(acc),
            }
        }
    }

    fn factor(&mut self) -> Result<Ast, ExprError> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(simp_neg(self.factor()?))
            }
            Some(b'+') => {
                self.pos += 1;
                self.factor()
            }
            _ => self.atom(),
        }
    }

    fn atom(&mut self) -> Result<Ast, ExprError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.error("expected ')'"));
                }
                self.pos += 1;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.ident(),
            _ => Err(self.error("expected a number, name or '('")),
        }
    }

    fn number(&mut self) -> Result<Ast, ExprError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_digit() || self.src[self.pos] == b'.')
        {
            self.pos += 1;
        }
        // Exponent suffix, e.g. 1e-3.
        if self.pos < self.src.len() && (self.src[self.pos] | 0x20) == b'e' {
            let mut probe = self.pos + 1;
            if probe < self.src.len() && (self.src[probe] == b'+' || self.src[probe] == b'-') {
                probe += 1;
            }
            if probe < self.src.len() && self.src[probe].is_ascii_digit() {
                self.pos = probe;
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            }
        }
        let text = core::str::from_utf8(&self.src[start..self.pos]).unwrap();
        text.parse::<f64>()
            .map(Ast::Const)
            .map_err(|_| ExprError { message: format!("bad number `{text}`"), position: start })
    }

    fn ident(&mut self) -> Result<Ast, ExprError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let name = core::str::from_utf8(&self.src[start..self.pos]).unwrap();
        match name {
            "pi" => Ok(Ast::Const(core::f64::consts::PI)),
            "cos" | "sin" | "exp" => {
                if self.peek() != Some(b'(') {
                    return Err(self.error("expected '(' after function name"));
                }
                self.pos += 1;
                let arg = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.error("expected ')'"));
                }
                self.pos += 1;
                Ok(match name {
                    "cos" => Ast::Cos(Box::new(arg)),
                    "sin" => Ast::Sin(Box::new(arg)),
                    _ => Ast::Exp(Box::new(arg)),
                })
            }
            _ => {
                if let Some(rest) = name.strip_prefix('x') {
                    if let Ok(i) = rest.parse::<usize>() {
                        return Ok(Ast::Coord(i));
                    }
                }
                Err(ExprError {
                    message: format!("unknown name `{name}`"),
                    position: start,
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_evaluates() {
        let f = ScalarField::parse("0.1*cos(2*pi*x0)").unwrap();
        assert!((f.value(&[0.0]) - 0.1).abs() < 1e-15);
        assert!((f.value(&[0.25])).abs() < 1e-15);
        assert_eq!(f.needed_dim(), 1);
    }

    #[test]
    fn symbolic_gradient_matches_finite_differences() {
        let f = ScalarField::parse("exp(x0/2) * sin(x1) - x0*x1 + 3").unwrap();
        let x = [0.3, -0.7];
        let g = f.gradient(&x);
        let h = 1e-6;
        for i in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[i] += h;
            xm[i] -= h;
            let fd = (f.value(&xp) - f.value(&xm)) / (2.0 * h);
            assert!((g[i] - fd).abs() < 1e-8, "coord {i}: {} vs {}", g[i], fd);
        }
    }

    #[test]
    fn symbolic_hessian_matches_finite_differences() {
        let f = ScalarField::parse("cos(x0)*sin(2*x1) + x0*x0*x1").unwrap();
        let x = [0.4, 1.1];
        let hess = f.hessian(&x);
        let h = 1e-5;
        for i in 0..2 {
            for j in 0..2 {
                let mut xpp = x;
                xpp[i] += h;
                xpp[j] += h;
                let mut xpm = x;
                xpm[i] += h;
                xpm[j] -= h;
                let mut xmp = x;
                xmp[i] -= h;
                xmp[j] += h;
                let mut xmm = x;
                xmm[i] -= h;
                xmm[j] -= h;
                let fd = (f.value(&xpp) - f.value(&xpm) - f.value(&xmp) + f.value(&xmm))
                    / (4.0 * h * h);
                assert!((hess[i][j] - fd).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(ScalarField::parse("cos(").is_err());
        assert!(ScalarField::parse("2 +* 3").is_err());
        assert!(ScalarField::parse("y0 + 1").is_err());
        assert!(ScalarField::parse("1 2").is_err());
    }

    #[test]
    fn unary_minus_and_scientific_notation() {
        let f = ScalarField::parse("-x0 + 1e-2").unwrap();
        assert!((f.value(&[0.5]) + 0.49).abs() < 1e-15);
    }
}
