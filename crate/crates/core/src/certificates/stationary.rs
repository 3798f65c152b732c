use crate::error::{Error, Result};
use crate::expr::tape::Tape;
use crate::expr::{Expr, HyperBox};

#[derive(Clone, Copy, Debug)]
pub struct StationaryOptions {
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl Default for StationaryOptions {
    fn default() -> Self {
        StationaryOptions {
            grad_tol: 1e-8,
            max_iter: 1_000_000,
        }
    }
}

/// Gradient descent with Armijo backtracking until `||grad h|| <= grad_tol`.
/// Fails when the iterate leaves `domain` or the iteration budget runs out.
pub fn find_stationary(h: &Expr, domain: &HyperBox, x0: &[f64], opts: StationaryOptions) -> Result<Vec<f64>> {
    let n = h.arity();
    if x0.len() != n || domain.dim() != n {
        return Err(Error::InvalidArgument("find_stationary: dimension mismatch".into()));
    }
    if !domain.contains(x0) {
        return Err(Error::InvalidArgument("find_stationary: start outside domain".into()));
    }
    let mut outs = vec![h.clone()];
    outs.extend(h.gradient()?);
    let tape = Tape::compile(&outs);
    let mut slots = Vec::new();
    let mut cur = vec![0.0; n + 1];
    let mut trial = vec![0.0; n + 1];

    let mut x = x0.to_vec();
    tape.eval_into(&x, &mut slots, &mut cur)?;
    let mut step = 1.0;
    for _ in 0..opts.max_iter {
        let g = &cur[1..];
        let gg: f64 = g.iter().map(|v| v * v).sum();
        if gg.sqrt() <= opts.grad_tol {
            return Ok(x);
        }
        step *= 2.0;
        loop {
            let xt: Vec<f64> = x.iter().zip(g).map(|(xi, gi)| xi - step * gi).collect();
            let ok = domain.contains(&xt) && tape.eval_into(&xt, &mut slots, &mut trial).is_ok();
            if ok && trial[0] <= cur[0] - 1e-4 * step * gg {
                x = xt;
                std::mem::swap(&mut cur, &mut trial);
                break;
            }
            step *= 0.5;
            if step < 1e-20 {
                return Err(Error::Budget(format!(
                    "find_stationary: line search failed at {x:?} (gradient norm {:e})",
                    gg.sqrt()
                )));
            }
        }
    }
    Err(Error::Budget(format!(
        "find_stationary: no stationary point after {} iterations",
        opts.max_iter
    )))
}
