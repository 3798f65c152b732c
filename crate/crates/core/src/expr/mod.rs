//! Symbolic scalar expressions over a fixed number of real variables.
//!
//! An [`Expr`] is an immutable DAG of [`Node`]s tagged with its arity (the
//! number of variables it may reference). Expressions support exact symbolic
//! differentiation, IEEE point evaluation, rigorous interval evaluation and
//! compilation to a flat [`tape::Tape`] for repeated evaluation.

mod diff;
pub mod interval;
mod parse;
mod sexpr;
mod simplify;
pub mod tape;

use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::Arc;

pub use interval::{HyperBox, Interval};

use crate::error::ExprError;

#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Const(f64),
    Var(usize),
    Neg(Arc<Node>),
    Add(Arc<Node>, Arc<Node>),
    Sub(Arc<Node>, Arc<Node>),
    Mul(Arc<Node>, Arc<Node>),
    Div(Arc<Node>, Arc<Node>),
    Pow(Arc<Node>, i32),
    Square(Arc<Node>),
    Sqrt(Arc<Node>),
    Exp(Arc<Node>),
    Log(Arc<Node>),
    Sin(Arc<Node>),
    Cos(Arc<Node>),
    Abs(Arc<Node>),
    Min(Arc<Node>, Arc<Node>),
    Max(Arc<Node>, Arc<Node>),
    Norm2(Vec<Arc<Node>>),
}

impl Node {
    pub fn name(&self) -> &'static str {
        match self {
            Node::Const(_) => "const",
            Node::Var(_) => "var",
            Node::Neg(_) => "neg",
            Node::Add(..) => "+",
            Node::Sub(..) => "-",
            Node::Mul(..) => "*",
            Node::Div(..) => "/",
            Node::Pow(..) => "pow",
            Node::Square(_) => "sq",
            Node::Sqrt(_) => "sqrt",
            Node::Exp(_) => "exp",
            Node::Log(_) => "log",
            Node::Sin(_) => "sin",
            Node::Cos(_) => "cos",
            Node::Abs(_) => "abs",
            Node::Min(..) => "min",
            Node::Max(..) => "max",
            Node::Norm2(_) => "norm2",
        }
    }

    pub fn children(&self) -> Vec<&Arc<Node>> {
        match self {
            Node::Const(_) | Node::Var(_) => vec![],
            Node::Neg(a)
            | Node::Pow(a, _)
            | Node::Square(a)
            | Node::Sqrt(a)
            | Node::Exp(a)
            | Node::Log(a)
            | Node::Sin(a)
            | Node::Cos(a)
            | Node::Abs(a) => vec![a],
            Node::Add(a, b)
            | Node::Sub(a, b)
            | Node::Mul(a, b)
            | Node::Div(a, b)
            | Node::Min(a, b)
            | Node::Max(a, b) => vec![a, b],
            Node::Norm2(v) => v.iter().collect(),
        }
    }

    fn max_var(&self) -> Option<usize> {
        match self {
            Node::Var(i) => Some(*i),
            _ => self.children().into_iter().filter_map(|c| c.max_var()).max(),
        }
    }
}

/// Arity-tagged expression handle. Cloning is cheap (reference counted).
#[derive(Clone, Debug, PartialEq)]
pub struct Expr {
    arity: usize,
    root: Arc<Node>,
}

/// Point-evaluation failure: the node path is the sequence of child indices
/// from the root to the offending node.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
#[error("domain error in `{op}` at node path {path:?} (argument {arg})")]
pub struct EvalError {
    pub op: &'static str,
    pub path: Vec<usize>,
    pub arg: f64,
}

/// Interval evaluation met an operation whose domain may be violated on the box.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
#[error("box partially outside the domain of `{op}` at node path {path:?}")]
pub struct PartialDomain {
    pub op: &'static str,
    pub path: Vec<usize>,
}

impl Expr {
    pub(crate) fn from_node(arity: usize, root: Arc<Node>) -> Self {
        Expr { arity, root }
    }

    /// Checked constructor from a raw node.
    pub fn try_from_node(arity: usize, node: Node) -> Result<Self, ExprError> {
        if let Some(i) = node.max_var() {
            if i >= arity {
                return Err(ExprError::VarOutOfRange { index: i, arity });
            }
        }
        Ok(Expr {
            arity,
            root: Arc::new(node),
        })
    }

    pub fn constant(arity: usize, c: f64) -> Self {
        Expr::from_node(arity, Arc::new(Node::Const(c)))
    }

    /// Panics if `index >= arity`.
    pub fn var(arity: usize, index: usize) -> Self {
        assert!(index < arity, "variable x{index} out of range for arity {arity}");
        Expr::from_node(arity, Arc::new(Node::Var(index)))
    }

    /// All `arity` coordinate variables.
    pub fn vars(arity: usize) -> Vec<Expr> {
        (0..arity).map(|i| Expr::var(arity, i)).collect()
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn node(&self) -> &Node {
        &self.root
    }

    pub(crate) fn root(&self) -> &Arc<Node> {
        &self.root
    }

    /// Re-tag with a larger arity; variable indices keep their meaning. Used to
    /// embed state expressions into spaces with auxiliary variables.
    pub fn widen(&self, arity: usize) -> Result<Expr, ExprError> {
        if arity < self.arity {
            return Err(ExprError::ArityMismatch {
                left: self.arity,
                right: arity,
            });
        }
        Ok(Expr::from_node(arity, self.root.clone()))
    }

    pub fn as_const(&self) -> Option<f64> {
        match *self.root {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }

    fn unary(&self, f: impl FnOnce(Arc<Node>) -> Node) -> Expr {
        Expr::from_node(self.arity, Arc::new(f(self.root.clone())))
    }

    fn binary(&self, other: &Expr, f: impl FnOnce(Arc<Node>, Arc<Node>) -> Node) -> Expr {
        assert_eq!(
            self.arity, other.arity,
            "cannot combine expressions of arity {} and {}",
            self.arity, other.arity
        );
        Expr::from_node(self.arity, Arc::new(f(self.root.clone(), other.root.clone())))
    }

    pub fn square(&self) -> Expr {
        self.unary(Node::Square)
    }

    pub fn powi(&self, k: i32) -> Expr {
        match k {
            2 => self.square(),
            _ => self.unary(|a| Node::Pow(a, k)),
        }
    }

    pub fn sqrt(&self) -> Expr {
        self.unary(Node::Sqrt)
    }

    pub fn exp(&self) -> Expr {
        self.unary(Node::Exp)
    }

    pub fn ln(&self) -> Expr {
        self.unary(Node::Log)
    }

    pub fn sin(&self) -> Expr {
        self.unary(Node::Sin)
    }

    pub fn cos(&self) -> Expr {
        self.unary(Node::Cos)
    }

    pub fn abs(&self) -> Expr {
        self.unary(Node::Abs)
    }

    pub fn min(&self, other: &Expr) -> Expr {
        self.binary(other, Node::Min)
    }

    pub fn max(&self, other: &Expr) -> Expr {
        self.binary(other, Node::Max)
    }

    /// Euclidean norm of a vector of expressions; panics on an empty slice or
    /// mixed arities.
    pub fn norm2(items: &[Expr]) -> Expr {
        assert!(!items.is_empty(), "norm2 of an empty vector");
        let arity = items[0].arity;
        assert!(items.iter().all(|e| e.arity == arity), "norm2 arity mismatch");
        Expr::from_node(
            arity,
            Arc::new(Node::Norm2(items.iter().map(|e| e.root.clone()).collect())),
        )
    }

    /// Sum with constant folding of an empty list to zero.
    pub fn sum(arity: usize, items: impl IntoIterator<Item = Expr>) -> Expr {
        items
            .into_iter()
            .reduce(|a, b| a + b)
            .unwrap_or_else(|| Expr::constant(arity, 0.0))
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, EvalError> {
        assert_eq!(x.len(), self.arity, "point dimension does not match arity");
        let mut path = Vec::new();
        eval_node(&self.root, x, &mut path)
    }

    pub fn eval_interval(&self, bx: &HyperBox) -> Result<Interval, PartialDomain> {
        assert_eq!(bx.dim(), self.arity, "box dimension does not match arity");
        let mut path = Vec::new();
        eval_node_interval(&self.root, bx.intervals(), &mut path)
    }

    pub fn differentiate(&self, var: usize) -> Result<Expr, ExprError> {
        if var >= self.arity {
            return Err(ExprError::VarOutOfRange {
                index: var,
                arity: self.arity,
            });
        }
        diff::differentiate(self, var)
    }

    pub fn gradient(&self) -> Result<Vec<Expr>, ExprError> {
        (0..self.arity).map(|i| self.differentiate(i)).collect()
    }

    /// Semantics-preserving local rewrites and constant folding.
    pub fn simplify(&self) -> Expr {
        simplify::simplify(self)
    }

    /// Parse conventional infix notation with variables `x1..xn` (1-based).
    pub fn parse(src: &str, arity: usize) -> Result<Expr, ExprError> {
        parse::parse_infix(src, arity)
    }

    pub fn to_sexpr(&self) -> String {
        sexpr::write(self)
    }

    pub fn from_sexpr(src: &str) -> Result<Expr, ExprError> {
        sexpr::read(src)
    }

    /// Number of distinct nodes in the DAG.
    pub fn node_count(&self) -> usize {
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![&self.root];
        while let Some(n) = stack.pop() {
            if seen.insert(Arc::as_ptr(n)) {
                stack.extend(n.children());
            }
        }
        seen.len()
    }
}

fn eval_node(n: &Node, x: &[f64], path: &mut Vec<usize>) -> Result<f64, EvalError> {
    let mut child = |i: usize, c: &Node| -> Result<f64, EvalError> {
        path.push(i);
        let v = eval_node(c, x, path)?;
        path.pop();
        Ok(v)
    };
    let v = match n {
        Node::Const(c) => *c,
        Node::Var(i) => x[*i],
        Node::Neg(a) => -child(0, a)?,
        Node::Add(a, b) => child(0, a)? + child(1, b)?,
        Node::Sub(a, b) => child(0, a)? - child(1, b)?,
        Node::Mul(a, b) => child(0, a)? * child(1, b)?,
        Node::Div(a, b) => {
            let (p, q) = (child(0, a)?, child(1, b)?);
            if q == 0.0 {
                return Err(EvalError {
                    op: "/",
                    path: path.clone(),
                    arg: q,
                });
            }
            p / q
        }
        Node::Pow(a, k) => {
            let v = child(0, a)?;
            if *k < 0 && v == 0.0 {
                return Err(EvalError {
                    op: "pow",
                    path: path.clone(),
                    arg: v,
                });
            }
            v.powi(*k)
        }
        Node::Square(a) => {
            let v = child(0, a)?;
            v * v
        }
        Node::Sqrt(a) => {
            let v = child(0, a)?;
            if v < 0.0 {
                return Err(EvalError {
                    op: "sqrt",
                    path: path.clone(),
                    arg: v,
                });
            }
            v.sqrt()
        }
        Node::Exp(a) => child(0, a)?.exp(),
        Node::Log(a) => {
            let v = child(0, a)?;
            if v <= 0.0 {
                return Err(EvalError {
                    op: "log",
                    path: path.clone(),
                    arg: v,
                });
            }
            v.ln()
        }
        Node::Sin(a) => child(0, a)?.sin(),
        Node::Cos(a) => child(0, a)?.cos(),
        Node::Abs(a) => child(0, a)?.abs(),
        Node::Min(a, b) => child(0, a)?.min(child(1, b)?),
        Node::Max(a, b) => child(0, a)?.max(child(1, b)?),
        Node::Norm2(items) => {
            let mut s = 0.0;
            for (i, c) in items.iter().enumerate() {
                let v = child(i, c)?;
                s += v * v;
            }
            s.sqrt()
        }
    };
    Ok(v)
}

fn eval_node_interval(
    n: &Node,
    x: &[Interval],
    path: &mut Vec<usize>,
) -> Result<Interval, PartialDomain> {
    let mut child = |i: usize, c: &Node| -> Result<Interval, PartialDomain> {
        path.push(i);
        let v = eval_node_interval(c, x, path)?;
        path.pop();
        Ok(v)
    };
    let partial = |op: &'static str, path: &Vec<usize>| PartialDomain {
        op,
        path: path.clone(),
    };
    let v = match n {
        Node::Const(c) => Interval::point(*c),
        Node::Var(i) => x[*i],
        Node::Neg(a) => child(0, a)?.neg(),
        Node::Add(a, b) => child(0, a)?.add(child(1, b)?),
        Node::Sub(a, b) => child(0, a)?.sub(child(1, b)?),
        Node::Mul(a, b) => child(0, a)?.mul(child(1, b)?),
        Node::Div(a, b) => {
            let (p, q) = (child(0, a)?, child(1, b)?);
            p.div(q).ok_or_else(|| partial("/", path))?
        }
        Node::Pow(a, k) => child(0, a)?.powi(*k).ok_or_else(|| partial("pow", path))?,
        Node::Square(a) => child(0, a)?.square(),
        Node::Sqrt(a) => child(0, a)?.sqrt().ok_or_else(|| partial("sqrt", path))?,
        Node::Exp(a) => child(0, a)?.exp(),
        Node::Log(a) => child(0, a)?.ln().ok_or_else(|| partial("log", path))?,
        Node::Sin(a) => child(0, a)?.sin(),
        Node::Cos(a) => child(0, a)?.cos(),
        Node::Abs(a) => child(0, a)?.abs(),
        Node::Min(a, b) => child(0, a)?.min(child(1, b)?),
        Node::Max(a, b) => child(0, a)?.max(child(1, b)?),
        Node::Norm2(items) => {
            let mut s = Interval::point(0.0);
            for (i, c) in items.iter().enumerate() {
                s = s.add(child(i, c)?.square());
            }
            norm_from_sumsq(s)
        }
    };
    Ok(v)
}

/// Square root of a sum of squares; the lower bound may have been rounded
/// below zero.
pub(crate) fn norm_from_sumsq(s: Interval) -> Interval {
    Interval {
        lo: s.lo.max(0.0),
        hi: s.hi,
    }
    .sqrt()
    .expect("nonnegative after clamp")
}

macro_rules! binop {
    ($trait:ident, $method:ident, $variant:ident) => {
        impl $trait<Expr> for Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                self.binary(&rhs, Node::$variant)
            }
        }
        impl $trait<&Expr> for Expr {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                self.binary(rhs, Node::$variant)
            }
        }
        impl $trait<Expr> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                self.binary(&rhs, Node::$variant)
            }
        }
        impl $trait<&Expr> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                self.binary(rhs, Node::$variant)
            }
        }
        impl $trait<f64> for Expr {
            type Output = Expr;
            fn $method(self, rhs: f64) -> Expr {
                let c = Expr::constant(self.arity, rhs);
                self.binary(&c, Node::$variant)
            }
        }
        impl $trait<f64> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: f64) -> Expr {
                let c = Expr::constant(self.arity, rhs);
                self.binary(&c, Node::$variant)
            }
        }
        impl $trait<Expr> for f64 {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                Expr::constant(rhs.arity, self).binary(&rhs, Node::$variant)
            }
        }
        impl $trait<&Expr> for f64 {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                Expr::constant(rhs.arity, self).binary(rhs, Node::$variant)
            }
        }
    };
}

binop!(Add, add, Add);
binop!(Sub, sub, Sub);
binop!(Mul, mul, Mul);
binop!(Div, div, Div);

impl Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        self.unary(Node::Neg)
    }
}

impl Neg for &Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        self.unary(Node::Neg)
    }
}
