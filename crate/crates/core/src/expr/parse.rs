//! Recursive-descent parser for scalar expressions.
//!
//! ```text
//! expr    = term { ("+" | "-") term } ;
//! term    = unary { ("*" | "/") unary } ;
//! unary   = "-" unary | power ;
//! power   = primary [ "^" [ "-" ] integer ] ;
//! primary = number | "pi" | variable | func "(" expr ")" | "(" expr ")" ;
//! func    = "sin" | "cos" | "exp" ;
//! variable = "x" digit { digit } ;
//! ```

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Num(f64),
    Var { index: usize, offset: usize },
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, i32),
    Call { func: Func, arg: Box<Node>, offset: usize },
}

pub(crate) fn parse_source(source: &str, dim: usize) -> Result<Node> {
    let mut p = Parser { src: source.as_bytes(), pos: 0, dim };
    let node = p.expr()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.error("unexpected trailing input"));
    }
    Ok(node)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    dim: usize,
}

impl Parser<'_> {
    fn error(&self, message: &str) -> Error {
        Error::Syntax { offset: self.pos, message: message.to_string() }
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

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat(b'-') {
                lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(b'*') {
                lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat(b'/') {
                lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Node> {
        if self.eat(b'-') {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.primary()?;
        if !self.eat(b'^') {
            return Ok(base);
        }
        let negative = self.eat(b'-');
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.error("expected an integer exponent"));
        }
        let digits = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        let k: i32 = digits.parse().map_err(|_| Error::Syntax {
            offset: start,
            message: "exponent out of range".into(),
        })?;
        Ok(Node::Pow(Box::new(base), if negative { -k } else { k }))
    }

    fn primary(&mut self) -> Result<Node> {
        match self.peek() {
            None => Err(self.error("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.error("expected `)`"));
                }
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.identifier(),
            Some(_) => Err(self.error("unexpected character")),
        }
    }

    fn number(&mut self) -> Result<Node> {
        let start = self.pos;
        let bytes = self.src;
        let mut i = self.pos;
        while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
            i += 1;
        }
        if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
            let mut j = i + 1;
            if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                j += 1;
            }
            if j < bytes.len() && bytes[j].is_ascii_digit() {
                while j < bytes.len() && bytes[j].is_ascii_digit() {
                    j += 1;
                }
                i = j;
            }
        }
        let text = std::str::from_utf8(&bytes[start..i]).unwrap();
        let v: f64 = text.parse().map_err(|_| Error::Syntax {
            offset: start,
            message: format!("malformed number `{text}`"),
        })?;
        self.pos = i;
        Ok(Node::Num(v))
    }

    fn identifier(&mut self) -> Result<Node> {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphanumeric() {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        let func = match name {
            "pi" => return Ok(Node::Num(std::f64::consts::PI)),
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            _ => None,
        };
        if let Some(func) = func {
            if !self.eat(b'(') {
                return Err(self.error("expected `(` after function name"));
            }
            let arg = self.expr()?;
            if !self.eat(b')') {
                return Err(self.error("expected `)`"));
            }
            return Ok(Node::Call { func, arg: Box::new(arg), offset: start });
        }
        if let Some(digits) = name.strip_prefix('x') {
            if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
                if let Ok(index) = digits.parse::<usize>() {
                    if index < self.dim {
                        return Ok(Node::Var { index, offset: start });
                    }
                }
            }
        }
        Err(Error::UnknownIdentifier { name: name.to_string(), offset: start })
    }
}

/// How a subexpression depends on the periodic variables.
enum Shape {
    /// No bare periodic variable; `constant` when no variable at all.
    Free { constant: bool },
    /// Affine in the bare periodic variables, with these coefficients.
    Affine(Vec<f64>),
}

/// Rejects any occurrence of a periodic variable outside `sin`/`cos` of an
/// argument that is affine in periodic variables with coefficients in 2πℤ.
pub(crate) fn check_periodicity(node: &Node, periodic: &[bool]) -> Result<()> {
    match shape(node, periodic)? {
        Shape::Free { .. } => Ok(()),
        Shape::Affine(c) => {
            let var = c.iter().position(|v| *v != 0.0).unwrap_or(0);
            Err(Error::Periodicity { var, offset: first_offset(node, var).unwrap_or(0) })
        }
    }
}

fn first_offset(node: &Node, var: usize) -> Option<usize> {
    match node {
        Node::Num(_) => None,
        Node::Var { index, offset } => (*index == var).then_some(*offset),
        Node::Neg(a) | Node::Pow(a, _) => first_offset(a, var),
        Node::Call { arg, .. } => first_offset(arg, var),
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
            first_offset(a, var).or_else(|| first_offset(b, var))
        }
    }
}

fn const_value(node: &Node) -> f64 {
    super::eval_node(node, &[])
}

fn violation(node: &Node, coeffs: &[f64]) -> Error {
    let var = coeffs.iter().position(|v| *v != 0.0).unwrap_or(0);
    Error::Periodicity { var, offset: first_offset(node, var).unwrap_or(0) }
}

fn shape(node: &Node, periodic: &[bool]) -> Result<Shape> {
    let n = periodic.len();
    Ok(match node {
        Node::Num(_) => Shape::Free { constant: true },
        Node::Var { index, .. } => {
            if periodic[*index] {
                let mut c = vec![0.0; n];
                c[*index] = 1.0;
                Shape::Affine(c)
            } else {
                Shape::Free { constant: false }
            }
        }
        Node::Neg(a) => match shape(a, periodic)? {
            Shape::Affine(c) => Shape::Affine(c.into_iter().map(|v| -v).collect()),
            free => free,
        },
        Node::Add(a, b) | Node::Sub(a, b) => {
            let sign = if matches!(node, Node::Sub(..)) { -1.0 } else { 1.0 };
            match (shape(a, periodic)?, shape(b, periodic)?) {
                (Shape::Free { constant: x }, Shape::Free { constant: y }) => {
                    Shape::Free { constant: x && y }
                }
                (Shape::Affine(c), Shape::Free { .. }) => Shape::Affine(c),
                (Shape::Free { .. }, Shape::Affine(c)) => {
                    Shape::Affine(c.into_iter().map(|v| sign * v).collect())
                }
                (Shape::Affine(c), Shape::Affine(d)) => {
                    Shape::Affine(c.iter().zip(&d).map(|(x, y)| x + sign * y).collect())
                }
            }
        }
        Node::Mul(a, b) => match (shape(a, periodic)?, shape(b, periodic)?) {
            (Shape::Free { constant: x }, Shape::Free { constant: y }) => {
                Shape::Free { constant: x && y }
            }
            (Shape::Affine(c), Shape::Free { constant: true }) => {
                let k = const_value(b);
                Shape::Affine(c.into_iter().map(|v| v * k).collect())
            }
            (Shape::Free { constant: true }, Shape::Affine(c)) => {
                let k = const_value(a);
                Shape::Affine(c.into_iter().map(|v| v * k).collect())
            }
            (Shape::Affine(c), _) | (_, Shape::Affine(c)) => return Err(violation(node, &c)),
        },
        Node::Div(a, b) => match (shape(a, periodic)?, shape(b, periodic)?) {
            (Shape::Free { constant: x }, Shape::Free { constant: y }) => {
                Shape::Free { constant: x && y }
            }
            (Shape::Affine(c), Shape::Free { constant: true }) => {
                let k = const_value(b);
                Shape::Affine(c.into_iter().map(|v| v / k).collect())
            }
            (Shape::Affine(c), _) | (_, Shape::Affine(c)) => return Err(violation(node, &c)),
        },
        Node::Pow(a, _) => match shape(a, periodic)? {
            Shape::Affine(c) => return Err(violation(node, &c)),
            free => free,
        },
        Node::Call { func, arg, .. } => match (func, shape(arg, periodic)?) {
            (_, Shape::Free { constant }) => Shape::Free { constant },
            (Func::Exp, Shape::Affine(c)) => return Err(violation(node, &c)),
            (_, Shape::Affine(c)) => {
                let two_pi = 2.0 * std::f64::consts::PI;
                for (i, v) in c.iter().enumerate() {
                    let k = v / two_pi;
                    if (k - k.round()).abs() > 1e-9 {
                        return Err(Error::Periodicity {
                            var: i,
                            offset: first_offset(arg, i).unwrap_or(0),
                        });
                    }
                }
                Shape::Free { constant: false }
            }
        },
    })
}
