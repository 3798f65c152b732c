//! Infix expression parser for configuration files.
//!
//! Grammar (usual precedence, `^` binds tightest and takes an integer exponent):
//!
//! ```text
//! sum     := product (('+' | '-') product)*
//! product := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := atom ('^' '-'? integer)?
//! atom    := number | 'pi' | x<k> | func '(' sum (',' sum)* ')' | '(' sum ')'
//! ```

use super::Expr;
use crate::error::ExprError;

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let ch = bytes[i] as char;
        if ch.is_ascii_whitespace() {
            i += 1;
        } else if ch.is_ascii_digit() || ch == '.' {
            let start = i;
            while i < bytes.len() && ((bytes[i] as char).is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let save = i;
                i += 1;
                if i < bytes.len() && (bytes[i] == b'+' || bytes[i] == b'-') {
                    i += 1;
                }
                if i < bytes.len() && bytes[i].is_ascii_digit() {
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                } else {
                    i = save;
                }
            }
            let text = &src[start..i];
            let v: f64 = text.parse().map_err(|_| ExprError::Parse {
                pos: start,
                msg: format!("bad number `{text}`"),
            })?;
            out.push((start, Tok::Num(v)));
        } else if ch.is_ascii_alphabetic() || ch == '_' {
            let start = i;
            while i < bytes.len() && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((start, Tok::Ident(src[start..i].to_string())));
        } else if "+-*/^(),".contains(ch) {
            out.push((i, Tok::Op(ch)));
            i += 1;
        } else {
            return Err(ExprError::Parse {
                pos: i,
                msg: format!("unexpected character `{ch}`"),
            });
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    arity: usize,
    src: &'a str,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn at(&self) -> usize {
        self.toks.get(self.pos).map(|(p, _)| *p).unwrap_or(self.src.len())
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, ExprError> {
        Err(ExprError::Parse {
            pos: self.at(),
            msg: msg.into(),
        })
    }

    fn eat(&mut self, op: char) -> bool {
        if self.peek() == Some(&Tok::Op(op)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, op: char) -> Result<(), ExprError> {
        if self.eat(op) {
            Ok(())
        } else {
            self.err(format!("expected `{op}`"))
        }
    }

    fn sum(&mut self) -> Result<Expr, ExprError> {
        let mut acc = self.product()?;
        loop {
            if self.eat('+') {
                acc = acc + self.product()?;
            } else if self.eat('-') {
                acc = acc - self.product()?;
            } else {
                return Ok(acc);
            }
        }
    }

    fn product(&mut self) -> Result<Expr, ExprError> {
        let mut acc = self.unary()?;
        loop {
            if self.eat('*') {
                acc = acc * self.unary()?;
            } else if self.eat('/') {
                acc = acc / self.unary()?;
            } else {
                return Ok(acc);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.eat('-') {
            let inner = self.unary()?;
            // fold negative literals so `-2` stays a constant
            return Ok(match inner.as_const() {
                Some(c) => Expr::constant(self.arity, -c),
                None => -inner,
            });
        }
        if self.eat('+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if !self.eat('^') {
            return Ok(base);
        }
        let negative = self.eat('-');
        match self.peek().cloned() {
            Some(Tok::Num(v)) if v.fract() == 0.0 && v.abs() <= i32::MAX as f64 => {
                self.pos += 1;
                let k = if negative { -(v as i32) } else { v as i32 };
                Ok(base.powi(k))
            }
            _ => self.err("exponent must be an integer literal"),
        }
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        let tok = match self.peek().cloned() {
            Some(t) => t,
            None => return self.err("unexpected end of input"),
        };
        match tok {
            Tok::Num(v) => {
                self.pos += 1;
                Ok(Expr::constant(self.arity, v))
            }
            Tok::Op('(') => {
                self.pos += 1;
                let e = self.sum()?;
                self.expect(')')?;
                Ok(e)
            }
            Tok::Ident(name) => {
                let start = self.at();
                self.pos += 1;
                if self.peek() == Some(&Tok::Op('(')) {
                    self.pos += 1;
                    let mut args = vec![self.sum()?];
                    while self.eat(',') {
                        args.push(self.sum()?);
                    }
                    self.expect(')')?;
                    return self.call(&name, args, start);
                }
                if name == "pi" {
                    return Ok(Expr::constant(self.arity, std::f64::consts::PI));
                }
                if let Some(idx) = name.strip_prefix('x').and_then(|d| d.parse::<usize>().ok()) {
                    if idx == 0 || idx > self.arity {
                        return Err(ExprError::VarOutOfRange {
                            index: idx.wrapping_sub(1),
                            arity: self.arity,
                        });
                    }
                    return Ok(Expr::var(self.arity, idx - 1));
                }
                Err(ExprError::Parse {
                    pos: start,
                    msg: format!("unknown identifier `{name}`"),
                })
            }
            Tok::Op(c) => self.err(format!("unexpected `{c}`")),
        }
    }

    fn call(&self, name: &str, args: Vec<Expr>, pos: usize) -> Result<Expr, ExprError> {
        let one = |args: &[Expr]| -> Result<Expr, ExprError> {
            if args.len() != 1 {
                return Err(ExprError::Parse {
                    pos,
                    msg: format!("`{name}` takes one argument"),
                });
            }
            Ok(args[0].clone())
        };
        let two = |args: &[Expr]| -> Result<(Expr, Expr), ExprError> {
            if args.len() != 2 {
                return Err(ExprError::Parse {
                    pos,
                    msg: format!("`{name}` takes two arguments"),
                });
            }
            Ok((args[0].clone(), args[1].clone()))
        };
        Ok(match name {
            "sin" => one(&args)?.sin(),
            "cos" => one(&args)?.cos(),
            "exp" => one(&args)?.exp(),
            "log" | "ln" => one(&args)?.ln(),
            "sqrt" => one(&args)?.sqrt(),
            "abs" => one(&args)?.abs(),
            "square" | "sq" => one(&args)?.square(),
            "min" => {
                let (a, b) = two(&args)?;
                a.min(&b)
            }
            "max" => {
                let (a, b) = two(&args)?;
                a.max(&b)
            }
            "norm2" => Expr::norm2(&args),
            _ => {
                return Err(ExprError::Parse {
                    pos,
                    msg: format!("unknown function `{name}`"),
                })
            }
        })
    }
}

pub(crate) fn parse_infix(src: &str, arity: usize) -> Result<Expr, ExprError> {
    let toks = lex(src)?;
    let mut p = Parser {
        toks,
        pos: 0,
        arity,
        src,
    };
    let e = p.sum()?;
    if p.pos != p.toks.len() {
        return p.err("trailing input");
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_and_powers() {
        let e = Expr::parse("x1^2 + 2*x2^2 - -3", 2).unwrap();
        assert_eq!(e.eval(&[1.0, 2.0]).unwrap(), 12.0);
        let e = Expr::parse("-x1^2", 1).unwrap();
        assert_eq!(e.eval(&[3.0]).unwrap(), -9.0);
        let e = Expr::parse("2^-1 * x1", 1).unwrap();
        assert_eq!(e.eval(&[4.0]).unwrap(), 2.0);
    }

    #[test]
    fn functions_and_constants() {
        let e = Expr::parse("-sin(x1) + exp(0) + max(x1, pi) + 1.5e-1", 1).unwrap();
        let v = e.eval(&[0.5]).unwrap();
        assert!((v - (-(0.5f64.sin()) + 1.0 + std::f64::consts::PI + 0.15)).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Expr::parse("x1 +", 1).is_err());
        assert!(Expr::parse("x3", 2).is_err());
        assert!(Expr::parse("x0", 2).is_err());
        assert!(Expr::parse("foo(x1)", 1).is_err());
        assert!(Expr::parse("x1^x1", 1).is_err());
        assert!(Expr::parse("(x1", 1).is_err());
        assert!(Expr::parse("x1 $ 2", 1).is_err());
    }
}
