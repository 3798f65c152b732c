//! S-expression dump format: `(expr <arity> <body>)`.
//!
//! Constants are written with Rust's shortest round-trip float formatting and
//! variables as `x<index>` (0-based), so reading a dump back reproduces the
//! same tree exactly.

use std::fmt::Write;
use std::sync::Arc;

use super::{Expr, Node};
use crate::error::ExprError;

fn write_node(n: &Node, out: &mut String) {
    match n {
        Node::Const(c) => {
            let _ = write!(out, "{c:?}");
        }
        Node::Var(i) => {
            let _ = write!(out, "x{i}");
        }
        Node::Pow(a, k) => {
            out.push_str("(pow ");
            write_node(a, out);
            let _ = write!(out, " {k})");
        }
        other => {
            out.push('(');
            out.push_str(other.name());
            for c in other.children() {
                out.push(' ');
                write_node(c, out);
            }
            out.push(')');
        }
    }
}

pub(crate) fn write(e: &Expr) -> String {
    let mut s = format!("(expr {} ", e.arity());
    write_node(e.node(), &mut s);
    s.push(')');
    s
}

#[derive(Debug)]
enum Sx {
    Atom(String),
    List(Vec<Sx>),
}

fn tokenize(src: &str) -> Vec<String> {
    src.replace('(', " ( ")
        .replace(')', " ) ")
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

fn read_sx(toks: &[String], pos: &mut usize) -> Result<Sx, ExprError> {
    let bad = |msg: &str| ExprError::Parse {
        pos: 0,
        msg: format!("s-expression: {msg}"),
    };
    let t = toks.get(*pos).ok_or_else(|| bad("unexpected end"))?;
    *pos += 1;
    match t.as_str() {
        "(" => {
            let mut items = Vec::new();
            loop {
                match toks.get(*pos).map(String::as_str) {
                    Some(")") => {
                        *pos += 1;
                        return Ok(Sx::List(items));
                    }
                    Some(_) => items.push(read_sx(toks, pos)?),
                    None => return Err(bad("unclosed list")),
                }
            }
        }
        ")" => Err(bad("unexpected `)`")),
        atom => Ok(Sx::Atom(atom.to_string())),
    }
}

fn to_node(sx: &Sx) -> Result<Arc<Node>, ExprError> {
    let bad = |msg: String| ExprError::Parse {
        pos: 0,
        msg: format!("s-expression: {msg}"),
    };
    match sx {
        Sx::Atom(a) => {
            if let Some(idx) = a.strip_prefix('x') {
                let i = idx
                    .parse::<usize>()
                    .map_err(|_| bad(format!("bad variable `{a}`")))?;
                return Ok(Arc::new(Node::Var(i)));
            }
            let v: f64 = a.parse().map_err(|_| bad(format!("bad atom `{a}`")))?;
            Ok(Arc::new(Node::Const(v)))
        }
        Sx::List(items) => {
            let head = match items.first() {
                Some(Sx::Atom(h)) => h.as_str(),
                _ => return Err(bad("list without operator".into())),
            };
            let args = &items[1..];
            if head == "pow" {
                let k = match args.get(1) {
                    Some(Sx::Atom(k)) => k.parse::<i32>().map_err(|_| bad(format!("bad exponent `{k}`")))?,
                    _ => return Err(bad("pow needs an integer exponent".into())),
                };
                if args.len() != 2 {
                    return Err(bad("pow takes two arguments".into()));
                }
                return Ok(Arc::new(Node::Pow(to_node(&args[0])?, k)));
            }
            let kids = args.iter().map(to_node).collect::<Result<Vec<_>, _>>()?;
            let need = |n: usize| -> Result<(), ExprError> {
                if kids.len() == n {
                    Ok(())
                } else {
                    Err(bad(format!("`{head}` takes {n} arguments")))
                }
            };
            let node = match head {
                "neg" => {
                    need(1)?;
                    Node::Neg(kids[0].clone())
                }
                "sq" => {
                    need(1)?;
                    Node::Square(kids[0].clone())
                }
                "sqrt" | "exp" | "log" | "sin" | "cos" | "abs" => {
                    need(1)?;
                    let a = kids[0].clone();
                    match head {
                        "sqrt" => Node::Sqrt(a),
                        "exp" => Node::Exp(a),
                        "log" => Node::Log(a),
                        "sin" => Node::Sin(a),
                        "cos" => Node::Cos(a),
                        _ => Node::Abs(a),
                    }
                }
                "+" | "-" | "*" | "/" | "min" | "max" => {
                    need(2)?;
                    let (a, b) = (kids[0].clone(), kids[1].clone());
                    match head {
                        "+" => Node::Add(a, b),
                        "-" => Node::Sub(a, b),
                        "*" => Node::Mul(a, b),
                        "/" => Node::Div(a, b),
                        "min" => Node::Min(a, b),
                        _ => Node::Max(a, b),
                    }
                }
                "norm2" => {
                    if kids.is_empty() {
                        return Err(bad("norm2 of nothing".into()));
                    }
                    Node::Norm2(kids)
                }
                other => return Err(bad(format!("unknown operator `{other}`"))),
            };
            Ok(Arc::new(node))
        }
    }
}

pub(crate) fn read(src: &str) -> Result<Expr, ExprError> {
    let toks = tokenize(src);
    let mut pos = 0;
    let sx = read_sx(&toks, &mut pos)?;
    if pos != toks.len() {
        return Err(ExprError::Parse {
            pos: 0,
            msg: "s-expression: trailing input".into(),
        });
    }
    let items = match &sx {
        Sx::List(items) if items.len() == 3 => items,
        _ => {
            return Err(ExprError::Parse {
                pos: 0,
                msg: "s-expression: expected (expr <arity> <body>)".into(),
            })
        }
    };
    let arity = match (&items[0], &items[1]) {
        (Sx::Atom(h), Sx::Atom(n)) if h == "expr" => n.parse::<usize>().map_err(|_| ExprError::Parse {
            pos: 0,
            msg: format!("s-expression: bad arity `{n}`"),
        })?,
        _ => {
            return Err(ExprError::Parse {
                pos: 0,
                msg: "s-expression: expected (expr <arity> <body>)".into(),
            })
        }
    };
    let root = to_node(&items[2])?;
    Expr::try_from_node(arity, Arc::try_unwrap(root).unwrap_or_else(|a| (*a).clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn dump_format() {
        let x = Expr::vars(2);
        let e = x[0].square() + 0.1 * x[1].powi(3);
        assert_eq!(e.to_sexpr(), "(expr 2 (+ (sq x0) (* 0.1 (pow x1 3))))");
    }

    #[test]
    fn rejects_out_of_range_vars() {
        assert!(Expr::from_sexpr("(expr 1 (+ x0 x1))").is_err());
        assert!(Expr::from_sexpr("(expr 1 (frob x0))").is_err());
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            any::<f64>().prop_filter("finite", |v| v.is_finite()).prop_map(|c| Expr::constant(3, c)),
            (0usize..3).prop_map(|i| Expr::var(3, i)),
        ];
        leaf.prop_recursive(4, 32, 3, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| a + b),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| a / b),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| a.max(&b)),
                (inner.clone(), -4i32..5).prop_map(|(a, k)| a.powi(k)),
                inner.clone().prop_map(|a| a.sin().ln()),
                proptest::collection::vec(inner, 1..4).prop_map(|v| Expr::norm2(&v)),
            ]
        })
    }

    proptest! {
        #[test]
        fn sexpr_round_trips_exactly(e in arb_expr()) {
            let back = Expr::from_sexpr(&e.to_sexpr()).unwrap();
            prop_assert_eq!(back.to_sexpr(), e.to_sexpr());
            prop_assert_eq!(back.arity(), e.arity());
        }
    }
}
