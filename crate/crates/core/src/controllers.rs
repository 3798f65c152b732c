//! Admissible feedback laws extracted from a verified certificate.
//!
//! The outer laws act on `a = L_f W(x)` and `b = L_g W(x)^T`. Near the origin
//! the verified linear law `u = -K x` takes over, blended smoothly on the
//! shell `c/2 <= V <= c`.

use serde::{Deserialize, Serialize};

use crate::certificates::PatchedW;
use crate::error::{Error, Result};
use crate::system::{ControlAffineSystem, InputBounds};
use crate::verifier::LocalCertificate;

/// Fraction of the strict box margin demanded by the min-norm law.
pub const MINNORM_THETA: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LawKind {
    BallUniversal,
    BoxMinnorm,
    LinearLocal,
}

/// Bounded universal formula for `||u|| <= radius`:
/// `u = -radius phi(a, beta) (radius b)` with `beta = radius^2 ||b||^2` and
/// `phi = (a + sqrt(a^2 + beta^2)) / (beta (1 + sqrt(1 + beta)))`.
///
/// Returns `None` when `a >= radius ||b||`.
pub fn sontag_ball(a: f64, b: &[f64], radius: f64) -> Option<Vec<f64>> {
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if a >= radius * nb {
        return None;
    }
    Some(sontag_ball_raw(a, b, radius))
}

fn sontag_ball_raw(a: f64, b: &[f64], radius: f64) -> Vec<f64> {
    let beta = radius * radius * b.iter().map(|v| v * v).sum::<f64>();
    if beta == 0.0 {
        return vec![0.0; b.len()];
    }
    let phi = (a + a.hypot(beta)) / (beta * (1.0 + (1.0 + beta).sqrt()));
    b.iter().map(|bj| -radius * radius * phi * bj).collect()
}

fn clip(u: &mut [f64], bounds: &InputBounds) {
    match bounds {
        InputBounds::Ball { radius } => {
            let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > *radius {
                u.iter_mut().for_each(|v| *v *= radius / norm);
            }
        }
        InputBounds::Box { lower, upper } => {
            for (j, v) in u.iter_mut().enumerate() {
                *v = v.clamp(lower[j], upper[j]);
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `argmin ||u - u_mid||^2` subject to `a + b.u <= -sigma` and `u` in the box.
/// The minimizer is `clip(u_mid - nu b)` for the smallest feasible `nu >= 0`,
/// found by bisection. Returns `None` if no box point meets the constraint.
pub fn minnorm_box(a: f64, b: &[f64], bounds: &InputBounds, sigma: f64) -> Option<Vec<f64>> {
    let InputBounds::Box { .. } = bounds else {
        return None;
    };
    let m = b.len();
    let mid: Vec<f64> = (0..m).map(|j| bounds.mid(j)).collect();
    let rhs = -sigma - a;
    if dot(b, &mid) <= rhs {
        return Some(mid);
    }
    if bounds.support_min(b) > rhs {
        return None;
    }
    let at = |nu: f64| {
        let mut u: Vec<f64> = mid.iter().zip(b).map(|(c, bj)| c - nu * bj).collect();
        clip(&mut u, bounds);
        u
    };
    let mut hi = 1.0;
    while dot(b, &at(hi)) > rhs {
        hi *= 2.0;
        if !hi.is_finite() {
            return None;
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let nu = 0.5 * (lo + hi);
        if nu <= lo || nu >= hi {
            break;
        }
        if dot(b, &at(nu)) > rhs {
            lo = nu;
        } else {
            hi = nu;
        }
    }
    Some(at(hi))
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// A state feedback `x -> u`.
#[derive(Clone, Debug)]
pub struct FeedbackLaw {
    kind: LawKind,
    sys: ControlAffineSystem,
    bounds: InputBounds,
    w: Option<PatchedW>,
    local: Option<LocalCertificate>,
}

impl FeedbackLaw {
    /// Universal formula on `W` for a ball input set.
    pub fn ball_universal(w: PatchedW, sys: &ControlAffineSystem, radius: f64) -> Result<Self> {
        let bounds = InputBounds::Ball { radius };
        bounds.validate(sys.m())?;
        Self::outer(LawKind::BallUniversal, w, sys, bounds)
    }

    /// Pointwise min-norm law on `W` for a box input set.
    pub fn box_minnorm(w: PatchedW, sys: &ControlAffineSystem, bounds: &InputBounds) -> Result<Self> {
        if !matches!(bounds, InputBounds::Box { .. }) {
            return Err(Error::InvalidArgument("min-norm law needs box bounds".into()));
        }
        bounds.validate(sys.m())?;
        Self::outer(LawKind::BoxMinnorm, w, sys, bounds.clone())
    }

    /// Outer law matching the geometry of `bounds`.
    pub fn for_bounds(w: PatchedW, sys: &ControlAffineSystem, bounds: &InputBounds) -> Result<Self> {
        match bounds {
            InputBounds::Ball { radius } => Self::ball_universal(w, sys, *radius),
            InputBounds::Box { .. } => Self::box_minnorm(w, sys, bounds),
        }
    }

    /// `u = -K x` alone.
    pub fn linear_local(cert: LocalCertificate, sys: &ControlAffineSystem, bounds: &InputBounds) -> Result<Self> {
        bounds.validate(sys.m())?;
        let k = cert.k_matrix()?;
        if k.shape() != (sys.m(), sys.n()) {
            return Err(Error::InvalidArgument("gain has wrong shape".into()));
        }
        Ok(FeedbackLaw {
            kind: LawKind::LinearLocal,
            sys: sys.clone(),
            bounds: bounds.clone(),
            w: None,
            local: Some(cert),
        })
    }

    fn outer(kind: LawKind, w: PatchedW, sys: &ControlAffineSystem, bounds: InputBounds) -> Result<Self> {
        if w.arity() != sys.n() {
            return Err(Error::InvalidArgument("certificate arity differs from state dimension".into()));
        }
        Ok(FeedbackLaw {
            kind,
            sys: sys.clone(),
            bounds,
            w: Some(w),
            local: None,
        })
    }

    pub fn kind(&self) -> LawKind {
        self.kind
    }

    pub fn bounds(&self) -> &InputBounds {
        &self.bounds
    }

    pub fn local(&self) -> Option<&LocalCertificate> {
        self.local.as_ref()
    }

    /// `(L_f W(x), L_g W(x)^T)`.
    pub fn lie(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let w = self
            .w
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("linear law has no certificate".into()))?;
        let grad = w.eval(x)?.grad;
        let (f, g) = self.sys.eval(x)?;
        let (n, m) = (self.sys.n(), self.sys.m());
        let a = dot(&grad, &f);
        let b = (0..m).map(|j| (0..n).map(|i| grad[i] * g[i * m + j]).sum()).collect();
        Ok((a, b))
    }

    /// Outer law at `x`. With `saturate`, an infeasible point yields the raw
    /// formula projected onto the input set instead of an error.
    pub fn outer_input(&self, x: &[f64], saturate: bool) -> Result<Vec<f64>> {
        let (a, b) = self.lie(x)?;
        let infeasible = |detail: String| Error::Infeasible {
            point: x.to_vec(),
            detail,
        };
        match (&self.bounds, self.kind) {
            (InputBounds::Ball { radius }, _) => match sontag_ball(a, &b, *radius) {
                Some(u) => Ok(u),
                None if saturate => {
                    let mut u = sontag_ball_raw(a, &b, *radius);
                    clip(&mut u, &self.bounds);
                    Ok(u)
                }
                None => Err(infeasible(format!("L_fW = {a:e} >= radius * ||L_gW||"))),
            },
            (InputBounds::Box { .. }, _) => {
                let margin = -(a + self.bounds.support_min(&b));
                if margin > 0.0 {
                    minnorm_box(a, &b, &self.bounds, MINNORM_THETA * margin)
                        .ok_or_else(|| infeasible("box projection failed".into()))
                } else if saturate {
                    // best available: the minimizer of b.u over the box
                    Ok((0..b.len())
                        .map(|j| {
                            if b[j] > 0.0 {
                                self.bounds.mid(j) - self.bounds.half_width(j)
                            } else if b[j] < 0.0 {
                                self.bounds.mid(j) + self.bounds.half_width(j)
                            } else {
                                self.bounds.mid(j)
                            }
                        })
                        .collect())
                } else {
                    Err(infeasible(format!("box margin {margin:e} is not positive")))
                }
            }
        }
    }

    /// `V(x) / c` of the local certificate, if any.
    fn local_level(&self, x: &[f64]) -> Option<f64> {
        let cert = self.local.as_ref()?;
        let n = x.len();
        let mut v = 0.0;
        for i in 0..n {
            for j in 0..n {
                v += x[i] * cert.p[i][j] * x[j];
            }
        }
        Some(v / cert.c)
    }

    /// Evaluate the law.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.sys.n() {
            return Err(Error::InvalidArgument(format!(
                "state has {} entries, expected {}",
                x.len(),
                self.sys.n()
            )));
        }
        if self.kind == LawKind::LinearLocal {
            return Ok(self.local.as_ref().map(|c| c.input(x)).unwrap_or_default());
        }
        let Some(s) = self.local_level(x) else {
            return self.outer_input(x, false);
        };
        let cert = self.local.as_ref().expect("local level implies certificate");
        if s <= 0.5 {
            return Ok(cert.input(x));
        }
        if s >= 1.0 {
            return self.outer_input(x, false);
        }
        let t = smoothstep(2.0 * (s - 0.5));
        let lin = cert.input(x);
        let out = self.outer_input(x, true)?;
        Ok(lin.iter().zip(&out).map(|(l, o)| (1.0 - t) * l + t * o).collect())
    }
}

/// Outer law near the origin replaced by the verified linear law: `u = -K x`
/// on `V <= c/2`, a smoothstep blend on `c/2 <= V <= c`, the outer law beyond.
pub fn blended_law(outer: FeedbackLaw, local: LocalCertificate) -> Result<FeedbackLaw> {
    if outer.kind == LawKind::LinearLocal {
        return Err(Error::InvalidArgument("outer law must be certificate based".into()));
    }
    let p = local.p_matrix()?;
    let k = local.k_matrix()?;
    let (n, m) = (outer.sys.n(), outer.sys.m());
    if p.shape() != (n, n) || k.shape() != (m, n) || !(local.c > 0.0) {
        return Err(Error::InvalidArgument("local certificate does not fit the system".into()));
    }
    Ok(FeedbackLaw {
        local: Some(local),
        ..outer
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sontag_zero_gradient() {
        assert_eq!(sontag_ball(-1.0, &[0.0, 0.0], 1.0).unwrap(), vec![0.0, 0.0]);
        assert!(sontag_ball(0.0, &[0.0], 1.0).is_none());
    }

    #[test]
    fn sontag_scalar_sample() {
        // xdot = u, W = x^2 at x = 0.5: a = 0, b = 1
        let u = sontag_ball(0.0, &[1.0], 1.0).unwrap();
        // phi = 1 / (1 + sqrt 2)
        let want = -1.0 / (1.0 + 2f64.sqrt());
        assert!((u[0] - want).abs() < 1e-15);
        assert!(u[0] < 0.0 && u[0].abs() < 1.0);
    }

    #[test]
    fn sontag_bound_and_decrease_on_grid() {
        for radius in [0.3, 1.0, 4.0] {
            for i in 0..41 {
                for j in 0..41 {
                    let b = [-2.0 + 0.1 * i as f64, -1.5 + 0.075 * j as f64];
                    let nb = (b[0] * b[0] + b[1] * b[1]).sqrt();
                    for frac in [-3.0, -0.5, 0.0, 0.5, 0.99] {
                        let a = frac * radius * nb;
                        if let Some(u) = sontag_ball(a, &b, radius) {
                            let nu = (u[0] * u[0] + u[1] * u[1]).sqrt();
                            assert!(nu < radius, "{nu} vs {radius}");
                            if nb > 0.0 || a < 0.0 {
                                assert!(a + dot(&b, &u) < 0.0);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn minnorm_examples() {
        let bx = InputBounds::Box {
            lower: vec![-2.0],
            upper: vec![2.0],
        };
        assert_eq!(minnorm_box(-1.0, &[3.0], &bx, 0.5).unwrap(), vec![0.0]);
        let u = minnorm_box(0.0, &[1.0], &bx, 0.5).unwrap();
        assert!((u[0] + 0.5).abs() < 1e-12);
        assert!(minnorm_box(3.0, &[1.0], &bx, 0.5).is_none());
    }

    #[test]
    fn minnorm_matches_projection_oracle() {
        // dense grid oracle over a 2-d box
        let bx = InputBounds::Box {
            lower: vec![-2.0, -1.0],
            upper: vec![2.0, 3.0],
        };
        let b = [1.3, -0.7];
        let a = 1.1;
        let sigma = 0.4;
        let u = minnorm_box(a, &b, &bx, sigma).unwrap();
        assert!(a + dot(&b, &u) <= -sigma + 1e-12);
        let mid = [0.0, 1.0];
        let cost = |v: &[f64]| (v[0] - mid[0]).powi(2) + (v[1] - mid[1]).powi(2);
        let mut best = f64::INFINITY;
        for i in 0..=800 {
            for j in 0..=800 {
                let v = [-2.0 + 4.0 * i as f64 / 800.0, -1.0 + 4.0 * j as f64 / 800.0];
                if a + dot(&b, &v) <= -sigma {
                    best = best.min(cost(&v));
                }
            }
        }
        assert!(cost(&u) <= best + 1e-9);
        assert!(cost(&u) > best - 2e-2);
    }

    #[test]
    fn smoothstep_ends() {
        assert_eq!(smoothstep(0.0), 0.0);
        assert_eq!(smoothstep(1.0), 1.0);
        assert_eq!(smoothstep(0.5), 0.5);
    }
}
