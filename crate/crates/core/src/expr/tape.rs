//! Flat instruction tape compiled from one or more expressions.
//!
//! Compilation hash-conses structurally identical subterms, which matters for
//! Lie derivatives of log-sum-exp barriers where the same exponentials appear
//! in every partial derivative.

use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use super::interval::Interval;
use super::{norm_from_sumsq, Expr, Node};

#[derive(Clone, Debug)]
enum Op {
    Const(f64),
    Var(u32),
    Neg(u32),
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Pow(u32, i32),
    Square(u32),
    Sqrt(u32),
    Exp(u32),
    Log(u32),
    Sin(u32),
    Cos(u32),
    Abs(u32),
    Min(u32, u32),
    Max(u32, u32),
    Norm2(Box<[u32]>),
}

impl Op {
    fn key(&self) -> (u8, u64, u64, Option<&[u32]>) {
        match self {
            Op::Const(c) => (0, c.to_bits(), 0, None),
            Op::Var(i) => (1, *i as u64, 0, None),
            Op::Neg(a) => (2, *a as u64, 0, None),
            Op::Add(a, b) => (3, *a as u64, *b as u64, None),
            Op::Sub(a, b) => (4, *a as u64, *b as u64, None),
            Op::Mul(a, b) => (5, *a as u64, *b as u64, None),
            Op::Div(a, b) => (6, *a as u64, *b as u64, None),
            Op::Pow(a, k) => (7, *a as u64, *k as u32 as u64, None),
            Op::Square(a) => (8, *a as u64, 0, None),
            Op::Sqrt(a) => (9, *a as u64, 0, None),
            Op::Exp(a) => (10, *a as u64, 0, None),
            Op::Log(a) => (11, *a as u64, 0, None),
            Op::Sin(a) => (12, *a as u64, 0, None),
            Op::Cos(a) => (13, *a as u64, 0, None),
            Op::Abs(a) => (14, *a as u64, 0, None),
            Op::Min(a, b) => (15, *a as u64, *b as u64, None),
            Op::Max(a, b) => (16, *a as u64, *b as u64, None),
            Op::Norm2(v) => (17, 0, 0, Some(v)),
        }
    }
}

impl PartialEq for Op {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for Op {}

impl Hash for Op {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.key().hash(state);
    }
}

/// Domain violation during point evaluation of a tape.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
#[error("domain error in `{op}` (argument {arg})")]
pub struct TapeDomainError {
    pub op: &'static str,
    pub arg: f64,
}

#[derive(Clone, Debug)]
pub struct Tape {
    arity: usize,
    ops: Vec<Op>,
    outputs: Vec<u32>,
}

struct Compiler {
    ops: Vec<Op>,
    cse: HashMap<Op, u32>,
    by_ptr: HashMap<*const Node, u32>,
}

impl Compiler {
    fn push(&mut self, op: Op) -> u32 {
        if let Some(&i) = self.cse.get(&op) {
            return i;
        }
        let i = self.ops.len() as u32;
        self.ops.push(op.clone());
        self.cse.insert(op, i);
        i
    }

    fn visit(&mut self, n: &Arc<Node>) -> u32 {
        if let Some(&i) = self.by_ptr.get(&Arc::as_ptr(n)) {
            return i;
        }
        let op = match &**n {
            Node::Const(c) => Op::Const(*c),
            Node::Var(i) => Op::Var(*i as u32),
            Node::Neg(a) => Op::Neg(self.visit(a)),
            Node::Add(a, b) => Op::Add(self.visit(a), self.visit(b)),
            Node::Sub(a, b) => Op::Sub(self.visit(a), self.visit(b)),
            Node::Mul(a, b) => Op::Mul(self.visit(a), self.visit(b)),
            Node::Div(a, b) => Op::Div(self.visit(a), self.visit(b)),
            Node::Pow(a, k) => Op::Pow(self.visit(a), *k),
            Node::Square(a) => Op::Square(self.visit(a)),
            Node::Sqrt(a) => Op::Sqrt(self.visit(a)),
            Node::Exp(a) => Op::Exp(self.visit(a)),
            Node::Log(a) => Op::Log(self.visit(a)),
            Node::Sin(a) => Op::Sin(self.visit(a)),
            Node::Cos(a) => Op::Cos(self.visit(a)),
            Node::Abs(a) => Op::Abs(self.visit(a)),
            Node::Min(a, b) => Op::Min(self.visit(a), self.visit(b)),
            Node::Max(a, b) => Op::Max(self.visit(a), self.visit(b)),
            Node::Norm2(v) => Op::Norm2(v.iter().map(|c| self.visit(c)).collect()),
        };
        let i = self.push(op);
        self.by_ptr.insert(Arc::as_ptr(n), i);
        i
    }
}

impl Tape {
    /// Compile expressions sharing one arity; panics on mixed arities.
    pub fn compile(exprs: &[Expr]) -> Tape {
        let arity = exprs.first().map(Expr::arity).unwrap_or(0);
        assert!(exprs.iter().all(|e| e.arity() == arity), "tape arity mismatch");
        let mut c = Compiler {
            ops: Vec::new(),
            cse: HashMap::new(),
            by_ptr: HashMap::new(),
        };
        let outputs = exprs.iter().map(|e| c.visit(e.root())).collect();
        Tape {
            arity,
            ops: c.ops,
            outputs,
        }
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn outputs(&self) -> usize {
        self.outputs.len()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn eval_into(
        &self,
        x: &[f64],
        slots: &mut Vec<f64>,
        out: &mut [f64],
    ) -> Result<(), TapeDomainError> {
        debug_assert_eq!(x.len(), self.arity);
        slots.clear();
        slots.reserve(self.ops.len());
        for op in &self.ops {
            let s = |i: &u32| slots[*i as usize];
            let v = match op {
                Op::Const(c) => *c,
                Op::Var(i) => x[*i as usize],
                Op::Neg(a) => -s(a),
                Op::Add(a, b) => s(a) + s(b),
                Op::Sub(a, b) => s(a) - s(b),
                Op::Mul(a, b) => s(a) * s(b),
                Op::Div(a, b) => {
                    let q = s(b);
                    if q == 0.0 {
                        return Err(TapeDomainError { op: "/", arg: q });
                    }
                    s(a) / q
                }
                Op::Pow(a, k) => {
                    let v = s(a);
                    if *k < 0 && v == 0.0 {
                        return Err(TapeDomainError { op: "pow", arg: v });
                    }
                    v.powi(*k)
                }
                Op::Square(a) => s(a) * s(a),
                Op::Sqrt(a) => {
                    let v = s(a);
                    if v < 0.0 {
                        return Err(TapeDomainError { op: "sqrt", arg: v });
                    }
                    v.sqrt()
                }
                Op::Exp(a) => s(a).exp(),
                Op::Log(a) => {
                    let v = s(a);
                    if v <= 0.0 {
                        return Err(TapeDomainError { op: "log", arg: v });
                    }
                    v.ln()
                }
                Op::Sin(a) => s(a).sin(),
                Op::Cos(a) => s(a).cos(),
                Op::Abs(a) => s(a).abs(),
                Op::Min(a, b) => s(a).min(s(b)),
                Op::Max(a, b) => s(a).max(s(b)),
                Op::Norm2(v) => v.iter().map(|i| s(i) * s(i)).sum::<f64>().sqrt(),
            };
            slots.push(v);
        }
        for (o, &i) in out.iter_mut().zip(&self.outputs) {
            *o = slots[i as usize];
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>, TapeDomainError> {
        let mut slots = Vec::new();
        let mut out = vec![0.0; self.outputs.len()];
        self.eval_into(x, &mut slots, &mut out)?;
        Ok(out)
    }

    /// Interval evaluation. An output is `None` when some operation feeding it
    /// may leave its domain on the box.
    pub fn eval_interval_into(
        &self,
        x: &[Interval],
        slots: &mut Vec<Option<Interval>>,
        out: &mut [Option<Interval>],
    ) {
        debug_assert_eq!(x.len(), self.arity);
        slots.clear();
        slots.reserve(self.ops.len());
        for op in &self.ops {
            let s = |i: &u32| slots[*i as usize];
            let v = match op {
                Op::Const(c) => Some(Interval::point(*c)),
                Op::Var(i) => Some(x[*i as usize]),
                Op::Neg(a) => s(a).map(Interval::neg),
                Op::Add(a, b) => s(a).zip(s(b)).map(|(p, q)| p.add(q)),
                Op::Sub(a, b) => s(a).zip(s(b)).map(|(p, q)| p.sub(q)),
                Op::Mul(a, b) => s(a).zip(s(b)).map(|(p, q)| p.mul(q)),
                Op::Div(a, b) => s(a).zip(s(b)).and_then(|(p, q)| p.div(q)),
                Op::Pow(a, k) => s(a).and_then(|p| p.powi(*k)),
                Op::Square(a) => s(a).map(Interval::square),
                Op::Sqrt(a) => s(a).and_then(Interval::sqrt),
                Op::Exp(a) => s(a).map(Interval::exp),
                Op::Log(a) => s(a).and_then(Interval::ln),
                Op::Sin(a) => s(a).map(Interval::sin),
                Op::Cos(a) => s(a).map(Interval::cos),
                Op::Abs(a) => s(a).map(Interval::abs),
                Op::Min(a, b) => s(a).zip(s(b)).map(|(p, q)| p.min(q)),
                Op::Max(a, b) => s(a).zip(s(b)).map(|(p, q)| p.max(q)),
                Op::Norm2(v) => {
                    let mut acc = Some(Interval::point(0.0));
                    for i in v.iter() {
                        acc = acc.zip(s(i)).map(|(t, p)| t.add(p.square()));
                    }
                    acc.map(norm_from_sumsq)
                }
            };
            slots.push(v);
        }
        for (o, &i) in out.iter_mut().zip(&self.outputs) {
            *o = slots[i as usize];
        }
    }

    pub fn eval_interval(&self, x: &[Interval]) -> Vec<Option<Interval>> {
        let mut slots = Vec::new();
        let mut out = vec![None; self.outputs.len()];
        self.eval_interval_into(x, &mut slots, &mut out);
        out
    }
}
