use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{refute_forall, Condition, Premise, VerificationVerdict, VerifyOptions};
use crate::certificates::quadratic_form;
use crate::error::{Error, Result};
use crate::expr::{Expr, HyperBox};
use crate::linalg::{is_positive_definite, lambda_max, sym_norm2};
use crate::system::{ControlAffineSystem, InputBounds};

/// Quadratic CLF `V = x^T P x`, linear law `u = -K x`, base level `c`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalCertificate {
    pub p: Vec<Vec<f64>>,
    pub k: Vec<Vec<f64>>,
    pub c: f64,
}

impl LocalCertificate {
    pub fn p_matrix(&self) -> Result<DMatrix<f64>> {
        crate::linalg::from_rows(&self.p)
    }

    pub fn k_matrix(&self) -> Result<DMatrix<f64>> {
        crate::linalg::from_rows(&self.k)
    }

    pub fn v(&self) -> Result<Expr> {
        Ok(quadratic_form(&self.p_matrix()?))
    }

    /// `u = -K x`.
    pub fn input(&self, x: &[f64]) -> Vec<f64> {
        self.k
            .iter()
            .map(|row| -row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalReport {
    pub verdict: VerificationVerdict,
    /// Name of the sub-check that did not pass.
    pub failed: Option<String>,
    /// `-lambda_max(A_cl^T P + P A_cl) / 2`.
    pub eta: f64,
    /// Half-width of the inner box handled by the Taylor remainder bound.
    pub r0: f64,
    /// Bound on the closed-loop Hessians over the inner box, when one was
    /// computed and finite.
    pub hessian_bound: Option<f64>,
    /// Largest `|u_j|` (box) or `||u||` (ball) on `{V <= c}`.
    pub input_max: Vec<f64>,
}

impl LocalReport {
    fn fail(name: &str, verdict: VerificationVerdict, eta: f64, input_max: Vec<f64>) -> Self {
        LocalReport {
            verdict,
            failed: Some(name.to_string()),
            eta,
            r0: 0.0,
            hessian_bound: None,
            input_max,
        }
    }
}

fn closed_loop_exprs(sys: &ControlAffineSystem, k: &DMatrix<f64>) -> Vec<Expr> {
    let n = sys.n();
    let m = sys.m();
    let x = Expr::vars(n);
    let u: Vec<Expr> = (0..m)
        .map(|j| -Expr::sum(n, (0..n).filter(|&i| k[(j, i)] != 0.0).map(|i| k[(j, i)] * &x[i])))
        .collect();
    (0..n)
        .map(|i| (&sys.f()[i] + Expr::sum(n, (0..m).map(|j| &sys.g()[i][j] * &u[j]))).simplify())
        .collect()
}

/// Strict decrease of `V` under `u = -K x` on `{V <= c, max_i |x_i| >= r0}`.
pub fn local_outer_condition(cert: &LocalCertificate, sys: &ControlAffineSystem, r0: f64) -> Result<Condition> {
    let p = cert.p_matrix()?;
    let k = cert.k_matrix()?;
    let n = sys.n();
    if p.shape() != (n, n) || k.shape() != (sys.m(), n) {
        return Err(Error::InvalidArgument("local certificate has wrong shape".into()));
    }
    let pinv = p
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidArgument("P is singular".into()))?;
    let v = quadratic_form(&p);
    let grad = v.gradient()?;
    let field = closed_loop_exprs(sys, &k);
    let vdot = Expr::sum(n, (0..n).map(|i| &grad[i] * &field[i])).simplify();
    let x = Expr::vars(n);
    let sup = x[1..].iter().fold(x[0].abs(), |acc, xi| acc.max(&xi.abs()));
    let bounds: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let w = (cert.c * pinv[(i, i)]).sqrt();
            (-w, w)
        })
        .collect();
    Condition::new(
        "local_outer_0",
        (1..=n).map(|i| format!("x{i}")).collect(),
        vec![Premise::le(v, cert.c), Premise::ge(sup, r0)],
        vdot,
        Expr::constant(n, 0.0),
        HyperBox::from_bounds(&bounds),
    )
}

/// Half-width `r0` of the largest box `||x||_inf <= r0` (found by halving from
/// the ellipsoid's bounding box) on which `sqrt(n) r0 ||P|| H < 2 eta`, and
/// the Hessian bound `H` at the last tried width.
fn remainder_radius(
    sys: &ControlAffineSystem,
    k: &DMatrix<f64>,
    p: &DMatrix<f64>,
    c: f64,
    eta: f64,
) -> Result<(Option<f64>, f64)> {
    let n = sys.n();
    let pinv = p.clone().try_inverse().ok_or_else(|| Error::InvalidArgument("P is singular".into()))?;
    let field = closed_loop_exprs(sys, k);
    let mut hess_norms = Vec::with_capacity(n);
    for fi in &field {
        let mut entries = Vec::new();
        for d1 in fi.gradient()? {
            for d2 in d1.gradient()? {
                let d2 = d2.simplify();
                if d2.as_const() != Some(0.0) {
                    entries.push(d2);
                }
            }
        }
        hess_norms.push(if entries.is_empty() {
            Expr::constant(n, 0.0)
        } else {
            Expr::norm2(&entries)
        });
    }
    let pnorm = sym_norm2(p);
    let mut r0 = (0..n).map(|i| (c * pinv[(i, i)]).sqrt()).fold(0.0, f64::max);
    let mut hbound = f64::INFINITY;
    for _ in 0..80 {
        let inner = HyperBox::from_bounds(&vec![(-r0, r0); n]);
        let mut sumsq = 0.0;
        let mut finite = true;
        for e in &hess_norms {
            match e.eval_interval(&inner) {
                Ok(iv) => sumsq += iv.hi * iv.hi,
                Err(_) => finite = false,
            }
        }
        if finite {
            // one ulp of slack per rounding step is ample at this size
            hbound = sumsq.sqrt() * (1.0 + 1e-12);
            if (n as f64).sqrt() * r0 * pnorm * hbound < 2.0 * eta * (1.0 - 1e-12) {
                return Ok((Some(r0), hbound));
            }
        }
        r0 *= 0.5;
    }
    Ok((None, hbound))
}

/// Inner radius for `local_outer_condition`, computed as in `check_local`
/// without running the search. `None` if the matrix margin is not negative
/// or no radius works.
pub fn local_inner_radius(cert: &LocalCertificate, sys: &ControlAffineSystem) -> Result<Option<f64>> {
    let p = cert.p_matrix()?;
    let k = cert.k_matrix()?;
    if p.shape() != (sys.n(), sys.n()) || k.shape() != (sys.m(), sys.n()) {
        return Err(Error::InvalidArgument("local certificate has wrong shape".into()));
    }
    let (a, b) = sys.linearization()?;
    let acl = &a - &b * &k;
    let eta = -lambda_max(&(acl.transpose() * &p + &p * &acl)) / 2.0;
    if !(eta > 0.0) {
        return Ok(None);
    }
    Ok(remainder_radius(sys, &k, &p, cert.c, eta)?.0)
}

/// Certify `V = x^T P x` with `u = -K x` on `{V <= c}`:
///
/// 1. matrix margin `lambda_max(A_cl^T P + P A_cl) = -2 eta < 0`;
/// 2. inputs: `sqrt(c K_j P^-1 K_j^T)` inside the box bounds, or
///    `sqrt(c lambda_max(K P^-1 K^T)) <= radius` for a ball;
/// 3. near the origin, on `||x||_inf <= r0`, the Taylor remainder of the
///    closed loop is dominated: `sqrt(n) r0 ||P|| H < 2 eta`, where `H` bounds
///    the Frobenius norms of the closed-loop Hessians on that box;
/// 4. away from the origin, strict decrease by branch and prune.
pub fn check_local(
    cert: &LocalCertificate,
    sys: &ControlAffineSystem,
    bounds: &InputBounds,
    opts: &VerifyOptions,
) -> Result<LocalReport> {
    bounds.validate(sys.m())?;
    let n = sys.n();
    let m = sys.m();
    let p = cert.p_matrix()?;
    let k = cert.k_matrix()?;
    if p.shape() != (n, n) || k.shape() != (m, n) {
        return Err(Error::InvalidArgument("local certificate has wrong shape".into()));
    }
    if !is_positive_definite(&p) {
        return Err(Error::InvalidArgument("P is not positive definite".into()));
    }
    if !(cert.c > 0.0) {
        return Err(Error::InvalidArgument("base level c must be positive".into()));
    }
    let c = cert.c;
    let v = quadratic_form(&p);
    let pinv = p.clone().try_inverse().expect("positive definite");

    // 1. matrix margin
    let (a, b) = sys.linearization()?;
    let acl = &a - &b * &k;
    let lyap = acl.transpose() * &p + &p * &acl;
    let lmax = lambda_max(&lyap);
    let eta = -lmax / 2.0;
    if !(eta > 0.0) {
        let eig = lyap.clone().symmetric_eigen();
        let idx = eig.eigenvalues.imax();
        let dir: DVector<f64> = eig.eigenvectors.column(idx).into_owned();
        let scale = (0.25 * c / (dir.transpose() * &p * &dir)[(0, 0)]).sqrt();
        let w: Vec<f64> = (dir * scale).iter().copied().collect();
        let field = sys.field(&w, &cert.input(&w))?;
        let vgrad: Vec<f64> = (&p * DVector::from_column_slice(&w) * 2.0).iter().copied().collect();
        let vdot: f64 = vgrad.iter().zip(&field).map(|(a, b)| a * b).sum();
        let verdict = if vdot >= -opts.delta {
            VerificationVerdict::Falsified {
                witness: w,
                premise_residuals: vec![0.0, 0.0],
                conclusion: vdot,
            }
        } else {
            VerificationVerdict::Unknown {
                reason: format!("matrix margin is not negative (lambda_max = {lmax:e})"),
            }
        };
        return Ok(LocalReport::fail("matrix_margin", verdict, eta, vec![]));
    }

    // 2. inputs
    let mut input_max = Vec::new();
    match bounds {
        InputBounds::Box { lower, upper } => {
            for j in 0..m {
                let kj = k.row(j).transpose();
                let q = (kj.transpose() * &pinv * &kj)[(0, 0)];
                let umax = (c * q).sqrt();
                input_max.push(umax);
                let limit = upper[j].min(-lower[j]);
                if umax > limit {
                    let xs = &pinv * &kj * (c / q).sqrt();
                    // u_j(xs) = -umax
                    let w: Vec<f64> = if upper[j] <= -lower[j] { -xs } else { xs }.iter().copied().collect();
                    let verdict = VerificationVerdict::Falsified {
                        premise_residuals: vec![(v.eval(&w)? - c).max(0.0)],
                        witness: w,
                        conclusion: umax - limit,
                    };
                    return Ok(LocalReport::fail("input_bounds", verdict, eta, input_max));
                }
            }
        }
        InputBounds::Ball { radius } => {
            let chol = p.clone().cholesky().expect("positive definite");
            let linv_t = chol.l().transpose().try_inverse().expect("invertible");
            let mmat = &k * &linv_t;
            let svd = mmat.clone().svd(false, true);
            let (imax, smax) = svd
                .singular_values
                .iter()
                .enumerate()
                .fold((0, 0.0), |acc, (i, s)| if *s > acc.1 { (i, *s) } else { acc });
            let umax = c.sqrt() * smax;
            input_max.push(umax);
            if umax > *radius {
                let vt = svd.v_t.expect("requested");
                let z = vt.row(imax).transpose();
                let w: Vec<f64> = (&linv_t * z * c.sqrt()).iter().copied().collect();
                let verdict = VerificationVerdict::Falsified {
                    premise_residuals: vec![(v.eval(&w)? - c).max(0.0)],
                    witness: w,
                    conclusion: umax - radius,
                };
                return Ok(LocalReport::fail("input_bounds", verdict, eta, input_max));
            }
        }
    }

    // sublevel set must sit inside the working domain
    for i in 0..n {
        let w = (c * pinv[(i, i)]).sqrt();
        let d = sys.domain().get(i);
        if -w < d.lo || w > d.hi {
            let verdict = VerificationVerdict::Unknown {
                reason: format!("{{V <= {c}}} leaves the domain along x{}", i + 1),
            };
            return Ok(LocalReport::fail("domain", verdict, eta, input_max));
        }
    }

    // 3. remainder domination on the inner box
    let (r0, hbound) = remainder_radius(sys, &k, &p, c, eta)?;
    let ok = r0.is_some();
    let r0 = r0.unwrap_or(0.0);
    if !ok {
        let verdict = VerificationVerdict::Unknown {
            reason: "no inner box on which the remainder bound holds".into(),
        };
        let mut rep = LocalReport::fail("remainder", verdict, eta, input_max);
        rep.hessian_bound = hbound.is_finite().then_some(hbound);
        return Ok(rep);
    }

    // 4. outer region
    let cond = local_outer_condition(cert, sys, r0)?;
    let verdict = refute_forall(&cond, opts)?;
    let failed = if verdict.is_verified() {
        None
    } else {
        Some("outer_decrease".to_string())
    };
    Ok(LocalReport {
        verdict,
        failed,
        eta,
        r0,
        hessian_bound: Some(hbound),
        input_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn integrator() -> ControlAffineSystem {
        ControlAffineSystem::new(
            vec![Expr::constant(1, 0.0)],
            vec![vec![Expr::constant(1, 1.0)]],
            HyperBox::from_bounds(&[(-3.0, 3.0)]),
        )
        .unwrap()
    }

    fn cert(c: f64) -> LocalCertificate {
        LocalCertificate {
            p: vec![vec![1.0]],
            k: vec![vec![1.0]],
            c,
        }
    }

    #[test]
    fn integrator_verifies() {
        let rep = check_local(&cert(0.25), &integrator(), &InputBounds::Ball { radius: 1.0 }, &VerifyOptions::default())
            .unwrap();
        assert!(rep.verdict.is_verified(), "{rep:?}");
        assert!((rep.eta - 1.0).abs() < 1e-12);
        assert!((rep.input_max[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn integrator_input_too_large() {
        for bounds in [
            InputBounds::Ball { radius: 1.0 },
            InputBounds::Box {
                lower: vec![-1.0],
                upper: vec![1.0],
            },
        ] {
            let rep = check_local(&cert(4.0), &integrator(), &bounds, &VerifyOptions::default()).unwrap();
            assert_eq!(rep.failed.as_deref(), Some("input_bounds"));
            match rep.verdict {
                VerificationVerdict::Falsified { witness, conclusion, .. } => {
                    assert!((witness[0].abs() - 2.0).abs() < 1e-12);
                    assert!((conclusion - 1.0).abs() < 1e-12);
                }
                v => panic!("{v:?}"),
            }
        }
    }

    #[test]
    fn zero_gain_on_unstable_plant() {
        let x = Expr::var(1, 0);
        let sys = ControlAffineSystem::new(
            vec![x.clone()],
            vec![vec![Expr::constant(1, 1.0)]],
            HyperBox::from_bounds(&[(-3.0, 3.0)]),
        )
        .unwrap();
        let c = LocalCertificate {
            p: vec![vec![1.0]],
            k: vec![vec![0.0]],
            c: 0.25,
        };
        let rep = check_local(&c, &sys, &InputBounds::Ball { radius: 1.0 }, &VerifyOptions::default()).unwrap();
        assert_eq!(rep.failed.as_deref(), Some("matrix_margin"));
        assert!(rep.verdict.is_falsified());
    }

    #[test]
    fn indefinite_p_rejected() {
        let c = LocalCertificate {
            p: vec![vec![-1.0]],
            k: vec![vec![1.0]],
            c: 0.25,
        };
        assert!(check_local(&c, &integrator(), &InputBounds::Ball { radius: 1.0 }, &VerifyOptions::default()).is_err());
    }

    #[test]
    fn pendulum_like_local_law() {
        let x = Expr::vars(2);
        let sys = ControlAffineSystem::new(
            vec![Expr::constant(2, 0.0), -x[0].sin()],
            vec![vec![Expr::constant(2, 1.0)], vec![Expr::constant(2, -1.0)]],
            HyperBox::from_bounds(&[(-3.0, 3.0), (-3.0, 4.0)]),
        )
        .unwrap();
        let c = LocalCertificate {
            p: vec![vec![1.0, 0.0], vec![0.0, 2.0]],
            k: vec![vec![2.0, -4.0]],
            c: 0.05,
        };
        let rep = check_local(&c, &sys, &InputBounds::Ball { radius: 1.0 }, &VerifyOptions::default()).unwrap();
        assert!(rep.verdict.is_verified(), "{rep:?}");
        assert!((rep.input_max[0] - (12.0f64 * 0.05).sqrt()).abs() < 1e-12);
    }
}
