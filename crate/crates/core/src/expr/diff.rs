use std::collections::HashMap;
use std::sync::Arc;

use super::simplify::{add, div, mul, neg, pow, sub};
use super::{Expr, Node};
use crate::error::ExprError;

fn c(v: f64) -> Arc<Node> {
    Arc::new(Node::Const(v))
}

struct Differ {
    var: usize,
    memo: HashMap<*const Node, Arc<Node>>,
}

impl Differ {
    fn d(&mut self, n: &Arc<Node>) -> Result<Arc<Node>, ExprError> {
        if let Some(r) = self.memo.get(&Arc::as_ptr(n)) {
            return Ok(r.clone());
        }
        let out = match &**n {
            Node::Const(_) => c(0.0),
            Node::Var(j) => c(if *j == self.var { 1.0 } else { 0.0 }),
            Node::Neg(a) => neg(self.d(a)?),
            Node::Add(a, b) => add(self.d(a)?, self.d(b)?),
            Node::Sub(a, b) => sub(self.d(a)?, self.d(b)?),
            Node::Mul(a, b) => {
                let (da, db) = (self.d(a)?, self.d(b)?);
                add(mul(da, b.clone()), mul(a.clone(), db))
            }
            Node::Div(a, b) => {
                // (a/b)' = a'/b - a b' / b^2
                let (da, db) = (self.d(a)?, self.d(b)?);
                sub(
                    div(da, b.clone()),
                    div(mul(a.clone(), db), Arc::new(Node::Square(b.clone()))),
                )
            }
            Node::Pow(a, k) => {
                let da = self.d(a)?;
                mul(mul(c(*k as f64), pow(a.clone(), k - 1)), da)
            }
            Node::Square(a) => {
                let da = self.d(a)?;
                mul(mul(c(2.0), a.clone()), da)
            }
            Node::Sqrt(a) => {
                let da = self.d(a)?;
                div(da, mul(c(2.0), n.clone()))
            }
            Node::Exp(a) => {
                let da = self.d(a)?;
                mul(n.clone(), da)
            }
            Node::Log(a) => div(self.d(a)?, a.clone()),
            Node::Sin(a) => {
                let da = self.d(a)?;
                mul(Arc::new(Node::Cos(a.clone())), da)
            }
            Node::Cos(a) => {
                let da = self.d(a)?;
                neg(mul(Arc::new(Node::Sin(a.clone())), da))
            }
            Node::Abs(_) | Node::Min(..) | Node::Max(..) | Node::Norm2(_) => {
                return Err(ExprError::NonSmooth(n.name()));
            }
        };
        self.memo.insert(Arc::as_ptr(n), out.clone());
        Ok(out)
    }
}

pub(crate) fn differentiate(e: &Expr, var: usize) -> Result<Expr, ExprError> {
    let mut d = Differ {
        var,
        memo: HashMap::new(),
    };
    Ok(Expr::from_node(e.arity(), d.d(e.root())?))
}
