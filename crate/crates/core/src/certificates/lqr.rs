use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{lambda_min, lyapunov, norm_inf, spectral_abscissa};

pub const RESIDUAL_TOL: f64 = 1e-9;
const MAX_ITER: usize = 200;
const STALL_STEPS: usize = 5;

#[derive(Clone, Debug)]
pub struct LqrSolution {
    pub p: DMatrix<f64>,
    /// Feedback `u = -K x`.
    pub k: DMatrix<f64>,
    pub residual: f64,
    pub iterations: usize,
}

fn care_residual(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, rinv: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
    let r = a.transpose() * p + p * a - p * b * rinv * b.transpose() * p + q;
    norm_inf(&r)
}

/// Kleinman's Newton iteration for `A^T P + P A - P B R^-1 B^T P + Q = 0`
/// starting from a stabilizing gain `k0` (`A - B k0` Hurwitz).
pub fn kleinman_lqr(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    k0: &DMatrix<f64>,
) -> Result<LqrSolution> {
    let n = a.nrows();
    let m = b.ncols();
    if a.shape() != (n, n) || b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) || k0.shape() != (m, n) {
        return Err(Error::InvalidArgument("kleinman_lqr: shape mismatch".into()));
    }
    if lambda_min(q) < -1e-12 {
        return Err(Error::InvalidArgument("Q must be positive semidefinite".into()));
    }
    if lambda_min(r) <= 0.0 {
        return Err(Error::InvalidArgument("R must be positive definite".into()));
    }
    let abscissa = spectral_abscissa(&(a - b * k0));
    if abscissa >= 0.0 {
        return Err(Error::NotStabilizing(format!("spectral abscissa of A - B K0 is {abscissa}")));
    }
    let rinv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidArgument("R is singular".into()))?;

    let mut k = k0.clone();
    let mut best = f64::INFINITY;
    let mut stall = 0;
    for it in 1..=MAX_ITER {
        let acl = a - b * &k;
        let qk = q + k.transpose() * r * &k;
        let p = lyapunov(&acl, &qk)?;
        k = &rinv * b.transpose() * &p;
        let res = care_residual(a, b, q, &rinv, &p);
        if res <= RESIDUAL_TOL {
            return Ok(LqrSolution {
                p,
                k,
                residual: res,
                iterations: it,
            });
        }
        if res < best {
            best = res;
            stall = 0;
        } else {
            stall += 1;
            if stall >= STALL_STEPS {
                return Err(Error::Stalled {
                    iterations: it,
                    residual: best,
                });
            }
        }
    }
    Err(Error::Stalled {
        iterations: MAX_ITER,
        residual: best,
    })
}
