//! Local algebraic rewrites. These never change the value of an expression at
//! any point where it is defined, except that `0 * e` folds to `0` even where
//! `e` itself would raise a domain error.

use std::collections::HashMap;
use std::sync::Arc;

use super::{Expr, Node};

fn konst(n: &Node) -> Option<f64> {
    match n {
        Node::Const(c) => Some(*c),
        _ => None,
    }
}

fn c(v: f64) -> Arc<Node> {
    Arc::new(Node::Const(v))
}

pub(crate) fn neg(a: Arc<Node>) -> Arc<Node> {
    match &*a {
        Node::Const(v) => c(-v),
        Node::Neg(inner) => inner.clone(),
        _ => Arc::new(Node::Neg(a)),
    }
}

pub(crate) fn add(a: Arc<Node>, b: Arc<Node>) -> Arc<Node> {
    match (konst(&a), konst(&b)) {
        (Some(x), Some(y)) => c(x + y),
        (Some(x), None) if x == 0.0 => b,
        (None, Some(y)) if y == 0.0 => a,
        _ => match &*b {
            Node::Neg(inner) => Arc::new(Node::Sub(a, inner.clone())),
            _ => Arc::new(Node::Add(a, b)),
        },
    }
}

pub(crate) fn sub(a: Arc<Node>, b: Arc<Node>) -> Arc<Node> {
    match (konst(&a), konst(&b)) {
        (Some(x), Some(y)) => c(x - y),
        (Some(x), None) if x == 0.0 => neg(b),
        (None, Some(y)) if y == 0.0 => a,
        _ => match &*b {
            Node::Neg(inner) => Arc::new(Node::Add(a, inner.clone())),
            _ => Arc::new(Node::Sub(a, b)),
        },
    }
}

pub(crate) fn mul(a: Arc<Node>, b: Arc<Node>) -> Arc<Node> {
    match (konst(&a), konst(&b)) {
        (Some(x), Some(y)) => c(x * y),
        (Some(x), _) if x == 0.0 => c(0.0),
        (_, Some(y)) if y == 0.0 => c(0.0),
        (Some(x), _) if x == 1.0 => b,
        (_, Some(y)) if y == 1.0 => a,
        (Some(x), _) if x == -1.0 => neg(b),
        (_, Some(y)) if y == -1.0 => neg(a),
        // keep constants on the left so folding sees them
        (None, Some(_)) => mul(b, a),
        (Some(x), None) => match &*b {
            Node::Mul(l, r) => match konst(l) {
                Some(y) => mul(c(x * y), r.clone()),
                None => Arc::new(Node::Mul(a, b)),
            },
            Node::Neg(inner) => mul(c(-x), inner.clone()),
            _ => Arc::new(Node::Mul(a, b)),
        },
        _ => Arc::new(Node::Mul(a, b)),
    }
}

pub(crate) fn div(a: Arc<Node>, b: Arc<Node>) -> Arc<Node> {
    match (konst(&a), konst(&b)) {
        (Some(x), Some(y)) if y != 0.0 => c(x / y),
        (Some(x), _) if x == 0.0 => c(0.0),
        (_, Some(y)) if y == 1.0 => a,
        _ => Arc::new(Node::Div(a, b)),
    }
}

pub(crate) fn pow(a: Arc<Node>, k: i32) -> Arc<Node> {
    match (konst(&a), k) {
        (_, 0) => c(1.0),
        (_, 1) => a,
        (Some(x), k) if k > 0 || x != 0.0 => c(x.powi(k)),
        (_, 2) => Arc::new(Node::Square(a)),
        _ => Arc::new(Node::Pow(a, k)),
    }
}

fn unary_fold(a: Arc<Node>, f: fn(f64) -> Option<f64>, wrap: fn(Arc<Node>) -> Node) -> Arc<Node> {
    match konst(&a).and_then(f) {
        Some(v) => c(v),
        None => Arc::new(wrap(a)),
    }
}

pub(crate) fn rebuild(n: &Arc<Node>, memo: &mut HashMap<*const Node, Arc<Node>>) -> Arc<Node> {
    if let Some(r) = memo.get(&Arc::as_ptr(n)) {
        return r.clone();
    }
    let mut go = |x: &Arc<Node>| rebuild(x, memo);
    let out = match &**n {
        Node::Const(_) | Node::Var(_) => n.clone(),
        Node::Neg(a) => neg(go(a)),
        Node::Add(a, b) => {
            let (a, b) = (go(a), go(b));
            add(a, b)
        }
        Node::Sub(a, b) => {
            let (a, b) = (go(a), go(b));
            sub(a, b)
        }
        Node::Mul(a, b) => {
            let (a, b) = (go(a), go(b));
            mul(a, b)
        }
        Node::Div(a, b) => {
            let (a, b) = (go(a), go(b));
            div(a, b)
        }
        Node::Pow(a, k) => pow(go(a), *k),
        Node::Square(a) => unary_fold(go(a), |v| Some(v * v), Node::Square),
        Node::Sqrt(a) => unary_fold(go(a), |v| (v >= 0.0).then(|| v.sqrt()), Node::Sqrt),
        Node::Exp(a) => unary_fold(go(a), |v| Some(v.exp()), Node::Exp),
        Node::Log(a) => unary_fold(go(a), |v| (v > 0.0).then(|| v.ln()), Node::Log),
        Node::Sin(a) => unary_fold(go(a), |v| Some(v.sin()), Node::Sin),
        Node::Cos(a) => unary_fold(go(a), |v| Some(v.cos()), Node::Cos),
        Node::Abs(a) => unary_fold(go(a), |v| Some(v.abs()), Node::Abs),
        Node::Min(a, b) => {
            let (a, b) = (go(a), go(b));
            match (konst(&a), konst(&b)) {
                (Some(x), Some(y)) => c(x.min(y)),
                _ => Arc::new(Node::Min(a, b)),
            }
        }
        Node::Max(a, b) => {
            let (a, b) = (go(a), go(b));
            match (konst(&a), konst(&b)) {
                (Some(x), Some(y)) => c(x.max(y)),
                _ => Arc::new(Node::Max(a, b)),
            }
        }
        Node::Norm2(items) => Arc::new(Node::Norm2(items.iter().map(go).collect())),
    };
    memo.insert(Arc::as_ptr(n), out.clone());
    out
}

pub(crate) fn simplify(e: &Expr) -> Expr {
    let mut memo = HashMap::new();
    Expr::from_node(e.arity(), rebuild(e.root(), &mut memo))
}
