use serde::{Deserialize, Serialize};

use super::scale::ScaleBound;
use crate::error::{Error, Result};
use crate::expr::tape::Tape;
use crate::expr::Expr;
use crate::verifier::VerificationVerdict;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchParams {
    pub eps: f64,
    pub alpha: f64,
}

impl PatchParams {
    pub fn new(eps: f64, alpha: f64) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::InvalidArgument(format!("eps must lie in (0, 1), got {eps}")));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
        }
        Ok(PatchParams { eps, alpha })
    }
}

/// Bump value as a function of the barrier value `h`.
pub fn bump(h: f64, eps: f64) -> f64 {
    if h >= 1.0 {
        1.0
    } else if h <= 1.0 - eps {
        0.0
    } else {
        let d = eps * eps - (h - 1.0) * (h - 1.0);
        (-1.0 / d + 1.0 / (eps * eps)).exp()
    }
}

/// `db/dh`.
pub fn bump_derivative(h: f64, eps: f64) -> f64 {
    if h >= 1.0 || h <= 1.0 - eps {
        0.0
    } else {
        let d = eps * eps - (h - 1.0) * (h - 1.0);
        bump(h, eps) * 2.0 * (1.0 - h) / (d * d)
    }
}

/// Patched function `W = (1 - b) alpha V + b h`, dispatched on the value of
/// `h`: `W = h` on `{h >= 1}`, `W = alpha V` on `{h <= 1 - eps}`.
#[derive(Clone, Debug)]
pub struct PatchedW {
    h: Expr,
    h_stable: Expr,
    v_scaled: Expr,
    params: PatchParams,
    /// `[h, V_scaled, dh/dx.., dV_scaled/dx..]`
    tape: Tape,
    n: usize,
}

/// Pointwise data of the patched certificate.
#[derive(Clone, Debug, PartialEq)]
pub struct WPoint {
    pub w: f64,
    pub grad: Vec<f64>,
    pub h: f64,
    pub v: f64,
    pub b: f64,
}

impl PatchedW {
    pub fn params(&self) -> PatchParams {
        self.params
    }

    pub fn h(&self) -> &Expr {
        &self.h
    }

    pub fn v_scaled(&self) -> &Expr {
        &self.v_scaled
    }

    pub fn arity(&self) -> usize {
        self.n
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        let h = self.h_stable.eval(x)?;
        let eps = self.params.eps;
        if h >= 1.0 {
            return Ok(h);
        }
        let v = self.v_scaled.eval(x)?;
        if h <= 1.0 - eps {
            return Ok(v);
        }
        let b = bump(h, eps);
        Ok((1.0 - b) * v + b * h)
    }

    pub fn eval(&self, x: &[f64]) -> Result<WPoint> {
        let n = self.n;
        let out = self.tape.eval(x)?;
        let h = self.h_stable.eval(x)?;
        let v = out[1];
        let dh = &out[2..2 + n];
        let dv = &out[2 + n..2 + 2 * n];
        let eps = self.params.eps;
        if h >= 1.0 {
            return Ok(WPoint {
                w: h,
                grad: dh.to_vec(),
                h,
                v,
                b: 1.0,
            });
        }
        if h <= 1.0 - eps {
            return Ok(WPoint {
                w: v,
                grad: dv.to_vec(),
                h,
                v,
                b: 0.0,
            });
        }
        let b = bump(h, eps);
        let db = bump_derivative(h, eps);
        let grad = (0..n)
            .map(|i| (1.0 - b) * dv[i] + b * dh[i] + db * (h - v) * dh[i])
            .collect();
        Ok(WPoint {
            w: (1.0 - b) * v + b * h,
            grad,
            h,
            v,
            b,
        })
    }
}

/// Build the patched CLBF. Refuses unless compatibility on the band was
/// verified for the same `V_scaled` and `eps`, and the scaling was certified.
pub fn patch(
    v_scaled: &Expr,
    h: &Expr,
    h_stable: &Expr,
    params: PatchParams,
    compat: &VerificationVerdict,
    scale: &ScaleBound,
) -> Result<PatchedW> {
    if !compat.is_verified() {
        return Err(Error::Unverified(format!("compatibility on the band is {}", compat.label())));
    }
    if scale.eps != params.eps || scale.alpha != params.alpha {
        return Err(Error::Unverified(format!(
            "scaling certificate (eps {}, alpha {}) does not match patch parameters (eps {}, alpha {})",
            scale.eps, scale.alpha, params.eps, params.alpha
        )));
    }
    let n = h.arity();
    if v_scaled.arity() != n || h_stable.arity() != n {
        return Err(Error::InvalidArgument("patch: arity mismatch".into()));
    }
    let mut outs = vec![h.clone(), v_scaled.clone()];
    outs.extend(h.gradient()?);
    outs.extend(v_scaled.gradient()?);
    Ok(PatchedW {
        h: h.clone(),
        h_stable: h_stable.clone(),
        v_scaled: v_scaled.clone(),
        params,
        tape: Tape::compile(&outs),
        n,
    })
}

/// Everything downstream consumers need: barrier, scaled CLF, patched `W`.
#[derive(Clone, Debug)]
pub struct CertificateSet {
    pub h: Expr,
    pub h_stable: Expr,
    pub v_scaled: Expr,
    pub w: PatchedW,
    pub params: PatchParams,
    pub tau: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;
    use crate::verifier::VerificationVerdict;

    fn verified() -> VerificationVerdict {
        VerificationVerdict::Verified {
            delta: 1e-4,
            boxes_processed: 1,
        }
    }

    #[test]
    fn bump_values() {
        assert_eq!(bump(0.5, 0.5), 0.0);
        assert_eq!(bump(1.0, 0.5), 1.0);
        let v = bump(0.75, 0.5);
        assert!((v - (-4.0f64 / 3.0).exp()).abs() < 1e-15);
        assert!((v - 0.26360).abs() < 1e-5);
    }

    #[test]
    fn bump_monotone_and_derivative() {
        let eps = 0.3;
        let mut prev = 0.0;
        for i in 0..=1000 {
            let h = 0.6 + 0.5 * i as f64 / 1000.0;
            let b = bump(h, eps);
            assert!((0.0..=1.0).contains(&b) && b >= prev);
            prev = b;
            if h > 1.0 - eps + 1e-3 && h < 1.0 - 1e-3 {
                let step = 1e-6;
                let fd = (bump(h + step, eps) - bump(h - step, eps)) / (2.0 * step);
                assert!((fd - bump_derivative(h, eps)).abs() <= 1e-6 * fd.abs().max(1.0));
            }
        }
    }

    #[test]
    fn patch_refuses_without_evidence() {
        let x = Expr::vars(1);
        let h = x[0].square();
        let v = 0.5 * x[0].square();
        let params = PatchParams::new(0.5, 0.5).unwrap();
        let scale = ScaleBound {
            eps: 0.5,
            alpha: 0.5,
            upper: 1.0,
            lower: 1.0,
            argmax: vec![1.0],
            boxes: 1,
        };
        let unknown = VerificationVerdict::Unknown {
            reason: "budget".into(),
        };
        assert!(patch(&v, &h, &h, params, &unknown, &scale).is_err());
        let other = ScaleBound {
            eps: 0.25,
            ..scale.clone()
        };
        assert!(patch(&v, &h, &h, params, &verified(), &other).is_err());
        assert!(patch(&v, &h, &h, params, &verified(), &scale).is_ok());
    }

    #[test]
    fn branches_and_gradient() {
        let x = Expr::vars(2);
        let h = x[0].square() + 0.5 * x[1].square() + 0.3 * &x[0] * &x[1];
        let v = 0.2 * (x[0].square() + x[1].square());
        let params = PatchParams::new(0.4, 0.2).unwrap();
        let scale = ScaleBound {
            eps: 0.4,
            alpha: 0.2,
            upper: 3.0,
            lower: 3.0,
            argmax: vec![0.0, 0.0],
            boxes: 1,
        };
        let w = patch(&v, &h, &h, params, &verified(), &scale).unwrap();
        for i in 0..30 {
            for j in 0..30 {
                let p = [-1.5 + 0.1 * i as f64, -1.5 + 0.1 * j as f64];
                let pt = w.eval(&p).unwrap();
                assert_eq!(pt.w, w.value(&p).unwrap());
                if pt.h >= 1.0 {
                    assert_eq!(pt.w, pt.h);
                } else if pt.h <= 0.6 {
                    assert_eq!(pt.w, pt.v);
                }
                let step = 1e-7;
                for k in 0..2 {
                    let mut a = p;
                    let mut b = p;
                    a[k] += step;
                    b[k] -= step;
                    let fd = (w.value(&a).unwrap() - w.value(&b).unwrap()) / (2.0 * step);
                    assert!((fd - pt.grad[k]).abs() < 1e-5, "{p:?} {fd} {}", pt.grad[k]);
                }
            }
        }
    }
}
