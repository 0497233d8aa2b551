//! Scalar functions on ℝⁿ and flat tori, parsed from text, with exact
//! gradients and Hessians by forward-mode (nested) dual numbers.
//!
//! Periodic coordinates have period 1. A periodic variable may only occur
//! inside `sin`/`cos` whose argument is affine in the periodic variables with
//! coefficients in 2πℤ, so `cos(2*pi*(x0 - 0.3))` is accepted and `x0^2` is
//! not.

mod dual;
mod parse;

pub use dual::{Dual, Scalar};
pub use parse::{Func, Node};

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq)]
enum Op {
    Const(f64),
    Var(usize),
    Neg,
    Add,
    Sub,
    Mul,
    Div,
    Pow(i32),
    Sin,
    Cos,
    Exp,
}

/// An immutable, parsed scalar function. Cheap to clone and safe to share
/// across threads.
#[derive(Clone, Debug)]
pub struct ScalarFunction {
    inner: Arc<Inner>,
}

#[derive(Debug)]
struct Inner {
    source: String,
    ast: Node,
    tape: Vec<Op>,
    depth: usize,
    dim: usize,
    periodic: Vec<bool>,
}

impl PartialEq for ScalarFunction {
    fn eq(&self, other: &Self) -> bool {
        self.inner.ast == other.inner.ast
            && self.inner.dim == other.inner.dim
            && self.inner.periodic == other.inner.periodic
    }
}

/// Parses `source` as a function of `x0..x{dim-1}`.
pub fn parse(source: &str, dim: usize, periodic: &[bool]) -> Result<ScalarFunction> {
    if dim == 0 {
        return Err(Error::InvalidArgument("dimension must be positive".into()));
    }
    if periodic.len() != dim {
        return Err(Error::Dimension { expected: dim, got: periodic.len() });
    }
    let ast = parse::parse_source(source, dim)?;
    parse::check_periodicity(&ast, periodic)?;
    Ok(ScalarFunction::from_ast(source.trim().to_string(), ast, dim, periodic.to_vec()))
}

impl ScalarFunction {
    fn from_ast(source: String, ast: Node, dim: usize, periodic: Vec<bool>) -> Self {
        let mut tape = Vec::new();
        compile(&ast, &mut tape);
        let depth = max_depth(&tape);
        ScalarFunction { inner: Arc::new(Inner { source, ast, tape, depth, dim, periodic }) }
    }

    pub fn source(&self) -> &str {
        &self.inner.source
    }

    pub fn ast(&self) -> &Node {
        &self.inner.ast
    }

    pub fn dim(&self) -> usize {
        self.inner.dim
    }

    pub fn periodic(&self) -> &[bool] {
        &self.inner.periodic
    }

    /// `-f`, used for reversed edge orientations and backward flows.
    pub fn negated(&self) -> ScalarFunction {
        let ast = match &self.inner.ast {
            Node::Neg(a) => (**a).clone(),
            other => Node::Neg(Box::new(other.clone())),
        };
        let source = match self.inner.source.strip_prefix("-(").and_then(|s| s.strip_suffix(')')) {
            Some(s) => s.to_string(),
            None => format!("-({})", self.inner.source),
        };
        ScalarFunction::from_ast(source, ast, self.inner.dim, self.inner.periodic.clone())
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.inner.dim {
            return Err(Error::Dimension { expected: self.inner.dim, got: x.len() });
        }
        Ok(())
    }

    /// Evaluates the tape over any scalar type. Division by an exact zero
    /// yields NaN, which the public entry points turn into a domain error.
    pub fn eval_generic<T: Scalar>(&self, x: &[T]) -> T {
        let mut stack: Vec<T> = Vec::with_capacity(self.inner.depth);
        for op in &self.inner.tape {
            match *op {
                Op::Const(c) => stack.push(T::constant(c)),
                Op::Var(i) => stack.push(x[i]),
                Op::Neg => {
                    let a = stack.pop().unwrap();
                    stack.push(-a);
                }
                Op::Pow(k) => {
                    let a = stack.pop().unwrap();
                    if k < 0 && a.value() == 0.0 {
                        stack.push(T::nan());
                    } else {
                        stack.push(a.powi(k));
                    }
                }
                Op::Sin => {
                    let a = stack.pop().unwrap();
                    stack.push(a.sin());
                }
                Op::Cos => {
                    let a = stack.pop().unwrap();
                    stack.push(a.cos());
                }
                Op::Exp => {
                    let a = stack.pop().unwrap();
                    stack.push(a.exp());
                }
                Op::Add | Op::Sub | Op::Mul | Op::Div => {
                    let b = stack.pop().unwrap();
                    let a = stack.pop().unwrap();
                    stack.push(match *op {
                        Op::Add => a + b,
                        Op::Sub => a - b,
                        Op::Mul => a * b,
                        _ => {
                            if b.value() == 0.0 {
                                T::nan()
                            } else {
                                a / b
                            }
                        }
                    });
                }
            }
        }
        stack.pop().unwrap()
    }

    /// f(x) without domain checking; NaN outside the domain.
    pub fn value_unchecked(&self, x: &[f64]) -> f64 {
        self.eval_generic(x)
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let v = self.eval_generic(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Domain { point: x.to_vec() })
        }
    }

    /// Gradient by one dual-number pass per coordinate.
    pub fn grad(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.check_dim(x)?;
        let g = self.grad_unchecked(x);
        if g.iter().all(|v| v.is_finite()) {
            Ok(g)
        } else {
            Err(Error::Domain { point: x.to_vec() })
        }
    }

    pub fn grad_unchecked(&self, x: &[f64]) -> DVector<f64> {
        let n = self.inner.dim;
        let mut seeded: Vec<Dual<f64>> = x.iter().map(|&v| Dual::new(v, 0.0)).collect();
        let mut g = DVector::zeros(n);
        for i in 0..n {
            seeded[i].eps = 1.0;
            g[i] = self.eval_generic(&seeded).eps;
            seeded[i].eps = 0.0;
        }
        g
    }

    /// Hessian by nested duals; entry (i, j) and (j, i) come from the same
    /// pass, so the result is exactly symmetric.
    pub fn hessian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_dim(x)?;
        let (_, h) = self.grad_hessian_unchecked(x);
        if h.iter().all(|v| v.is_finite()) {
            Ok(h)
        } else {
            Err(Error::Domain { point: x.to_vec() })
        }
    }

    /// Gradient and Hessian together, without domain checks.
    pub fn grad_hessian_unchecked(&self, x: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.inner.dim;
        let mut g = DVector::zeros(n);
        let mut h = DMatrix::zeros(n, n);
        let mut seeded: Vec<Dual<Dual<f64>>> =
            x.iter().map(|&v| Dual::new(Dual::new(v, 0.0), Dual::new(0.0, 0.0))).collect();
        for i in 0..n {
            for j in i..n {
                seeded[i].eps.re = 1.0;
                seeded[j].re.eps = 1.0;
                let r = self.eval_generic(&seeded);
                seeded[i].eps.re = 0.0;
                seeded[j].re.eps = 0.0;
                h[(i, j)] = r.eps.eps;
                h[(j, i)] = r.eps.eps;
                if i == j {
                    g[i] = r.eps.re;
                }
            }
        }
        (g, h)
    }
}

fn compile(node: &Node, tape: &mut Vec<Op>) {
    match node {
        Node::Num(v) => tape.push(Op::Const(*v)),
        Node::Var { index, .. } => tape.push(Op::Var(*index)),
        Node::Neg(a) => {
            compile(a, tape);
            tape.push(Op::Neg);
        }
        Node::Pow(a, k) => {
            compile(a, tape);
            tape.push(Op::Pow(*k));
        }
        Node::Call { func, arg, .. } => {
            compile(arg, tape);
            tape.push(match func {
                Func::Sin => Op::Sin,
                Func::Cos => Op::Cos,
                Func::Exp => Op::Exp,
            });
        }
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
            compile(a, tape);
            compile(b, tape);
            tape.push(match node {
                Node::Add(..) => Op::Add,
                Node::Sub(..) => Op::Sub,
                Node::Mul(..) => Op::Mul,
                _ => Op::Div,
            });
        }
    }
}

fn max_depth(tape: &[Op]) -> usize {
    let mut depth = 0usize;
    let mut max = 0;
    for op in tape {
        match op {
            Op::Const(_) | Op::Var(_) => depth += 1,
            Op::Add | Op::Sub | Op::Mul | Op::Div => depth -= 1,
            _ => {}
        }
        max = max.max(depth);
    }
    max
}

/// Direct recursive evaluation, used for constant folding during parsing.
pub(crate) fn eval_node(node: &Node, x: &[f64]) -> f64 {
    match node {
        Node::Num(v) => *v,
        Node::Var { index, .. } => x.get(*index).copied().unwrap_or(f64::NAN),
        Node::Neg(a) => -eval_node(a, x),
        Node::Add(a, b) => eval_node(a, x) + eval_node(b, x),
        Node::Sub(a, b) => eval_node(a, x) - eval_node(b, x),
        Node::Mul(a, b) => eval_node(a, x) * eval_node(b, x),
        Node::Div(a, b) => eval_node(a, x) / eval_node(b, x),
        Node::Pow(a, k) => eval_node(a, x).powi(*k),
        Node::Call { func, arg, .. } => {
            let v = eval_node(arg, x);
            match func {
                Func::Sin => v.sin(),
                Func::Cos => v.cos(),
                Func::Exp => v.exp(),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn p(src: &str, dim: usize) -> ScalarFunction {
        parse(src, dim, &vec![false; dim]).unwrap()
    }

    #[test]
    fn parses_minimal_polynomial() {
        let f = p("x0^2/2", 1);
        assert_eq!(f.eval(&[3.0]).unwrap(), 4.5);
    }

    #[test]
    fn parses_torus_morse_function() {
        let f = parse("cos(2*pi*x0)+cos(2*pi*x1)", 2, &[true, true]).unwrap();
        assert!((f.eval(&[0.0, 0.5]).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn syntax_error_reports_offset() {
        let err = parse("x0 + ", 1, &[false]).unwrap_err();
        assert_eq!(err, Error::Syntax { offset: 5, message: "unexpected end of input".into() });
    }

    #[test]
    fn unknown_identifier_and_out_of_range_variable() {
        assert!(matches!(
            parse("y + 1", 1, &[false]),
            Err(Error::UnknownIdentifier { ref name, offset: 0 }) if name == "y"
        ));
        assert!(matches!(
            parse("x0 * x2", 2, &[false, false]),
            Err(Error::UnknownIdentifier { offset: 5, .. })
        ));
    }

    #[test]
    fn periodicity_violations() {
        assert!(matches!(parse("x0^2", 1, &[true]), Err(Error::Periodicity { var: 0, offset: 0 })));
        assert!(matches!(parse("cos(x0)", 1, &[true]), Err(Error::Periodicity { var: 0, .. })));
        assert!(matches!(parse("exp(2*pi*x0)", 1, &[true]), Err(Error::Periodicity { .. })));
        assert!(matches!(
            parse("cos(2*pi*x0*x0)", 1, &[true]),
            Err(Error::Periodicity { .. })
        ));
        // shifts, integer multiples and mixed coordinates are fine
        parse("cos(2*pi*(x0 - 0.3)) + 0.5*sin(4*pi*x0 + 2*pi*x1)", 2, &[true, true]).unwrap();
        parse("sin(2*pi*x0) * x1^2", 2, &[true, false]).unwrap();
    }

    #[test]
    fn gradient_of_quadratic() {
        let f = p("x0^2/2 + x1^2", 2);
        let g = f.grad(&[1.0, 1.0]).unwrap();
        assert_eq!(g.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn hessian_of_cosine_at_origin() {
        let f = parse("cos(2*pi*x0)", 1, &[true]).unwrap();
        let h = f.hessian(&[0.0]).unwrap();
        assert!((h[(0, 0)] + 4.0 * PI * PI).abs() < 1e-12);
    }

    #[test]
    fn bilinear_hessian_is_exact() {
        let f = p("x0*x1", 2);
        for &(a, b) in &[(0.3, -1.7), (12.5, 3.25), (-0.001, 9.0)] {
            let h = f.hessian(&[a, b]).unwrap();
            assert_eq!(h[(0, 1)], 1.0);
            assert_eq!(h[(1, 0)], 1.0);
            assert_eq!(h[(0, 0)], 0.0);
        }
    }

    #[test]
    fn division_by_zero_is_a_domain_error() {
        let f = p("1/x0", 1);
        assert!(matches!(f.eval(&[0.0]), Err(Error::Domain { .. })));
        assert!(matches!(f.grad(&[0.0]), Err(Error::Domain { .. })));
        assert_eq!(f.eval(&[2.0]).unwrap(), 0.5);
        let g = p("x0^-2", 1);
        assert!(g.eval(&[0.0]).is_err());
    }

    #[test]
    fn negation_roundtrips() {
        let f = p("x0^2/2", 1);
        let g = f.negated();
        assert_eq!(g.eval(&[2.0]).unwrap(), -2.0);
        assert_eq!(g.negated(), f);
    }

    #[test]
    fn precedence_and_unary_minus() {
        let f = p("-x0^2 + 2*3 - 4/2", 1);
        assert_eq!(f.eval(&[3.0]).unwrap(), -9.0 + 6.0 - 2.0);
        let g = p("2^3 * 1e-1 + .5", 1);
        assert!((g.eval(&[0.0]).unwrap() - 1.3).abs() < 1e-15);
    }
}
