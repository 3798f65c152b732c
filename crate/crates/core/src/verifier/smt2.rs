//! SMT-LIB2 (QF_NRA) rendering of conditions, in the dialect accepted by
//! delta-complete solvers such as dReal (`exp`, `log`, `sin`, `cos`, `sqrt`,
//! `abs`, `min`, `max`, `^` with integer exponents).
//!
//! A file asserts the variable bounds, the premises and the negated
//! conclusion `lhs >= rhs`; `unsat` therefore means the condition holds.

use std::fmt::Write;
use std::sync::Arc;

use super::Condition;
use crate::expr::{Expr, Node};

/// Plain decimal literal (no exponent), negated with a unary minus.
fn real(c: f64) -> String {
    let mut s = format!("{}", c.abs());
    if !s.contains('.') {
        s.push_str(".0");
    }
    if c < 0.0 {
        format!("(- {s})")
    } else {
        s
    }
}

fn term(n: &Node, names: &[String], out: &mut String) {
    let app = |op: &str, kids: &[&Arc<Node>], out: &mut String| {
        out.push('(');
        out.push_str(op);
        for k in kids {
            out.push(' ');
            term(k, names, out);
        }
        out.push(')');
    };
    match n {
        Node::Const(c) => out.push_str(&real(*c)),
        Node::Var(i) => out.push_str(&names[*i]),
        Node::Neg(a) => app("-", &[a], out),
        Node::Add(a, b) => app("+", &[a, b], out),
        Node::Sub(a, b) => app("-", &[a, b], out),
        Node::Mul(a, b) => app("*", &[a, b], out),
        Node::Div(a, b) => app("/", &[a, b], out),
        Node::Pow(a, k) => {
            if *k < 0 {
                out.push_str("(/ 1.0 ");
                term(&Node::Pow(a.clone(), -k), names, out);
                out.push(')');
            } else {
                out.push_str("(^ ");
                term(a, names, out);
                let _ = write!(out, " {k})");
            }
        }
        Node::Square(a) => {
            out.push_str("(^ ");
            term(a, names, out);
            out.push_str(" 2)");
        }
        Node::Sqrt(a) => app("sqrt", &[a], out),
        Node::Exp(a) => app("exp", &[a], out),
        Node::Log(a) => app("log", &[a], out),
        Node::Sin(a) => app("sin", &[a], out),
        Node::Cos(a) => app("cos", &[a], out),
        Node::Abs(a) => app("abs", &[a], out),
        Node::Min(a, b) => app("min", &[a, b], out),
        Node::Max(a, b) => app("max", &[a, b], out),
        Node::Norm2(v) => {
            out.push_str("(sqrt (+ 0.0");
            for k in v {
                out.push_str(" (^ ");
                term(k, names, out);
                out.push_str(" 2)");
            }
            out.push_str("))");
        }
    }
}

pub fn render_expr(e: &Expr, names: &[String]) -> String {
    let mut s = String::new();
    term(e.node(), names, &mut s);
    s
}

pub fn render(cond: &Condition) -> String {
    let names = &cond.var_names;
    let mut s = String::new();
    let _ = writeln!(s, "; {}", cond.name);
    s.push_str("(set-logic QF_NRA)\n");
    for v in names {
        let _ = writeln!(s, "(declare-fun {v} () Real)");
    }
    for (v, iv) in names.iter().zip(cond.domain.intervals()) {
        let _ = writeln!(s, "(assert (<= {} {v}))", real(iv.lo));
        let _ = writeln!(s, "(assert (<= {v} {}))", real(iv.hi));
    }
    for p in &cond.premises {
        let e = render_expr(&p.expr, names);
        if p.lo == p.hi {
            let _ = writeln!(s, "(assert (= {e} {}))", real(p.lo));
            continue;
        }
        if p.lo.is_finite() {
            let _ = writeln!(s, "(assert (<= {} {e}))", real(p.lo));
        }
        if p.hi.is_finite() {
            let _ = writeln!(s, "(assert (<= {e} {}))", real(p.hi));
        }
    }
    let _ = writeln!(
        s,
        "(assert (>= {} {}))",
        render_expr(&cond.lhs, names),
        render_expr(&cond.rhs, names)
    );
    s.push_str("(check-sat)\n(exit)\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::HyperBox;
    use crate::verifier::Premise;

    #[test]
    fn literals_have_no_exponent() {
        assert_eq!(real(1e-20), "0.00000000000000000001");
        assert_eq!(real(-2.0), "(- 2.0)");
        assert_eq!(real(0.5), "0.5");
    }

    #[test]
    fn renders_condition() {
        let x = Expr::vars(2);
        let c = Condition::new(
            "cbf_0",
            vec!["x1".into(), "x2".into()],
            vec![Premise::eq(x[0].square() + x[1].powi(-2), 1.0), Premise::le(Expr::norm2(&x), 2.0)],
            x[0].sin().exp(),
            Expr::constant(2, 0.0),
            HyperBox::from_bounds(&[(-1.0, 1.0), (0.5, 2.0)]),
        )
        .unwrap();
        let s = render(&c);
        assert!(s.contains("(declare-fun x2 () Real)"));
        assert!(s.contains("(assert (<= (- 1.0) x1))"));
        assert!(s.contains("(assert (= (+ (^ x1 2) (/ 1.0 (^ x2 2))) 1.0))"));
        assert!(s.contains("(assert (<= (sqrt (+ 0.0 (^ x1 2) (^ x2 2))) 2.0))"));
        assert!(s.contains("(assert (>= (exp (sin x1)) 0.0))"));
        assert!(s.ends_with("(check-sat)\n(exit)\n"));
    }
}
