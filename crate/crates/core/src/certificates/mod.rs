//! Candidate certificates: softmax barrier, bump, CLF rescaling, the patched
//! CLBF and the LQR machinery used near the origin.

mod lqr;
mod patch;
mod scale;
mod stationary;

pub use lqr::{kleinman_lqr, LqrSolution};
pub use patch::{bump, bump_derivative, patch, CertificateSet, PatchParams, PatchedW};
pub use scale::{scale_clf, ScaleBound, ScaleOptions};
pub use stationary::{find_stationary, StationaryOptions};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::system::ConstraintSet;

/// `x^T P x` for a symmetric `P`.
pub fn quadratic_form(p: &DMatrix<f64>) -> Expr {
    let n = p.nrows();
    let x = Expr::vars(n);
    let mut terms = Vec::new();
    for i in 0..n {
        if p[(i, i)] != 0.0 {
            terms.push(p[(i, i)] * x[i].square());
        }
        for j in i + 1..n {
            let c = p[(i, j)] + p[(j, i)];
            if c != 0.0 {
                terms.push(c * &x[i] * &x[j]);
            }
        }
    }
    Expr::sum(n, terms).simplify()
}

/// `(1/tau) log sum_i exp(tau h_i)`, unshifted. This is the form used for
/// differentiation and interval evaluation. A single constraint is returned
/// as is.
pub fn softmax_barrier(hs: &ConstraintSet, tau: f64) -> Result<Expr> {
    check_tau(tau)?;
    let c = hs.constraints();
    if c.len() == 1 {
        return Ok(c[0].clone());
    }
    let n = hs.arity();
    let sum = Expr::sum(n, c.iter().map(|h| (tau * h).exp()));
    Ok(sum.ln() / tau)
}

/// Max-shifted form `m + (1/tau) log sum_i exp(tau (h_i - m))` with
/// `m = max_i h_i`, for overflow-free point evaluation.
pub fn softmax_barrier_stable(hs: &ConstraintSet, tau: f64) -> Result<Expr> {
    check_tau(tau)?;
    let c = hs.constraints();
    if c.len() == 1 {
        return Ok(c[0].clone());
    }
    let n = hs.arity();
    let m = c[1..].iter().fold(c[0].clone(), |acc, h| acc.max(h));
    let sum = Expr::sum(n, c.iter().map(|h| (tau * (h - &m)).exp()));
    Ok(&m + sum.ln() / tau)
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("softmax temperature must be positive, got {tau}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn walls() -> ConstraintSet {
        let x = Expr::vars(2);
        ConstraintSet::new(vec![&x[0] - 2.0, -&x[0] - 2.0, &x[1] - 1.5, -&x[1] - 3.0, -&x[0] - &x[1] - 1.0]).unwrap()
    }

    #[test]
    fn quadratic_form_matches_matrix_product() {
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let v = quadratic_form(&p);
        let x = [0.3, -1.2];
        let want = 2.0 * 0.09 + 2.0 * 0.5 * 0.3 * -1.2 + 1.44;
        assert!((v.eval(&x).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn single_constraint_is_identity() {
        let x = Expr::vars(2);
        let hs = ConstraintSet::new(vec![x[0].square() - 0.5]).unwrap();
        let h = softmax_barrier(&hs, 3.0).unwrap();
        assert_eq!(h.to_sexpr(), hs.constraints()[0].to_sexpr());
    }

    #[test]
    fn duplicated_constraint_shifts_by_log2() {
        let x = Expr::vars(1);
        let hs = ConstraintSet::new(vec![&x[0] * 0.5, &x[0] * 0.5]).unwrap();
        let tau = 4.5;
        let h = softmax_barrier(&hs, tau).unwrap();
        let hstab = softmax_barrier_stable(&hs, tau).unwrap();
        for p in [-1.0, 0.3, 1.7] {
            let want = 0.5 * p + 2f64.ln() / tau;
            assert!((h.eval(&[p]).unwrap() - want).abs() < 1e-14);
            assert!((hstab.eval(&[p]).unwrap() - want).abs() < 1e-15);
        }
    }

    #[test]
    fn stable_form_survives_large_arguments() {
        let x = Expr::vars(1);
        let hs = ConstraintSet::new(vec![x[0].clone(), -&x[0]]).unwrap();
        let stable = softmax_barrier_stable(&hs, 100.0).unwrap();
        let v = stable.eval(&[50.0]).unwrap();
        assert!((v - 50.0).abs() < 1e-12);
        assert!(softmax_barrier(&hs, 100.0).unwrap().eval(&[50.0]).unwrap().is_infinite());
    }

    #[test]
    fn sandwich_on_samples() {
        let hs = walls();
        let tau = 4.5;
        let h = softmax_barrier_stable(&hs, tau).unwrap();
        let bound = (hs.len() as f64).ln() / tau;
        for i in 0..40 {
            for j in 0..40 {
                let p = [-2.0 + 0.1 * i as f64, -3.0 + 0.12 * j as f64];
                let hm = hs.h_max(&p).unwrap();
                let v = h.eval(&p).unwrap();
                assert!(hm <= v && v <= hm + bound);
            }
        }
    }

    #[test]
    fn rejects_bad_temperature() {
        assert!(softmax_barrier(&walls(), 0.0).is_err());
        assert!(softmax_barrier_stable(&walls(), f64::NAN).is_err());
    }
}
