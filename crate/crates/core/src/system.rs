//! Control-affine plant model `x' = f(x) + g(x) u`, input sets and state
//! constraints.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::tape::Tape;
use crate::expr::{Expr, HyperBox};

/// Tolerance for the `f(0) = 0` equilibrium check.
pub const EQUILIBRIUM_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct ControlAffineSystem {
    f: Vec<Expr>,
    /// Row-major `n x m`.
    g: Vec<Vec<Expr>>,
    domain: HyperBox,
    tape: Tape,
}

impl ControlAffineSystem {
    pub fn new(f: Vec<Expr>, g: Vec<Vec<Expr>>, domain: HyperBox) -> Result<Self> {
        let n = f.len();
        if n == 0 {
            return Err(Error::InvalidModel("empty state vector".into()));
        }
        if g.len() != n {
            return Err(Error::InvalidModel(format!("g has {} rows, expected {n}", g.len())));
        }
        let m = g[0].len();
        if m == 0 || g.iter().any(|row| row.len() != m) {
            return Err(Error::InvalidModel("g must be a nonempty rectangular matrix".into()));
        }
        if f.iter().chain(g.iter().flatten()).any(|e| e.arity() != n) {
            return Err(Error::InvalidModel(format!("all entries of f and g must have arity {n}")));
        }
        if domain.dim() != n {
            return Err(Error::InvalidModel(format!(
                "domain has dimension {}, expected {n}",
                domain.dim()
            )));
        }
        let origin = vec![0.0; n];
        if !domain.contains_interior(&origin) {
            return Err(Error::InvalidModel("origin must lie strictly inside the domain".into()));
        }
        for (i, fi) in f.iter().enumerate() {
            let v = fi.eval(&origin)?;
            if v.abs() > EQUILIBRIUM_TOL {
                return Err(Error::InvalidModel(format!("f{}(0) = {v:e}, expected 0", i + 1)));
            }
        }
        let mut all = f.clone();
        all.extend(g.iter().flatten().cloned());
        let tape = Tape::compile(&all);
        Ok(ControlAffineSystem { f, g, domain, tape })
    }

    pub fn n(&self) -> usize {
        self.f.len()
    }

    pub fn m(&self) -> usize {
        self.g[0].len()
    }

    pub fn f(&self) -> &[Expr] {
        &self.f
    }

    pub fn g(&self) -> &[Vec<Expr>] {
        &self.g
    }

    pub fn domain(&self) -> &HyperBox {
        &self.domain
    }

    /// Column `j` of `g`.
    pub fn g_col(&self, j: usize) -> Vec<Expr> {
        self.g.iter().map(|row| row[j].clone()).collect()
    }

    /// Evaluate `f(x)` and row-major `g(x)`.
    pub fn eval(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let out = self.tape.eval(x)?;
        let n = self.n();
        Ok((out[..n].to_vec(), out[n..].to_vec()))
    }

    /// `f(x) + g(x) u`.
    pub fn field(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let (f, g) = self.eval(x)?;
        let m = self.m();
        Ok(f.iter()
            .enumerate()
            .map(|(i, fi)| fi + (0..m).map(|j| g[i * m + j] * u[j]).sum::<f64>())
            .collect())
    }

    /// `L_f V = grad V . f` and `(L_g V)_j = grad V . g_j`, simplified.
    pub fn lie_derivatives(&self, v: &Expr) -> Result<LieDerivatives> {
        if v.arity() != self.n() {
            return Err(Error::Expr(crate::ExprError::ArityMismatch {
                left: v.arity(),
                right: self.n(),
            }));
        }
        let grad = v.gradient()?;
        let n = self.n();
        let dot = |col: &dyn Fn(usize) -> Expr| {
            Expr::sum(n, (0..n).map(|i| &grad[i] * col(i))).simplify()
        };
        let lf = dot(&|i| self.f[i].clone());
        let lg = (0..self.m()).map(|j| dot(&|i| self.g[i][j].clone())).collect();
        Ok(LieDerivatives { lf, lg })
    }

    /// Jacobian of `f` and value of `g` at the origin.
    pub fn linearization(&self) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let n = self.n();
        let m = self.m();
        let origin = vec![0.0; n];
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            for k in 0..n {
                a[(i, k)] = self.f[i].differentiate(k)?.eval(&origin)?;
            }
        }
        let mut b = DMatrix::zeros(n, m);
        for i in 0..n {
            for j in 0..m {
                b[(i, j)] = self.g[i][j].eval(&origin)?;
            }
        }
        Ok((a, b))
    }

    /// Closed loop `x -> f(x) + g(x) kappa(x)`. Fails if `kappa(0)` is not
    /// (numerically) zero.
    pub fn closed_loop_field<'a, K>(&'a self, kappa: K) -> Result<ClosedLoop<'a, K>>
    where
        K: Fn(&[f64]) -> Result<Vec<f64>>,
    {
        let u0 = kappa(&vec![0.0; self.n()])?;
        if u0.len() != self.m() {
            return Err(Error::InvalidArgument(format!(
                "feedback returns {} inputs, expected {}",
                u0.len(),
                self.m()
            )));
        }
        if u0.iter().any(|u| u.abs() > 1e-9) {
            return Err(Error::InvalidArgument(format!(
                "feedback must vanish at the origin, got {u0:?}"
            )));
        }
        Ok(ClosedLoop { sys: self, kappa })
    }
}

pub struct ClosedLoop<'a, K> {
    sys: &'a ControlAffineSystem,
    kappa: K,
}

impl<K> ClosedLoop<'_, K>
where
    K: Fn(&[f64]) -> Result<Vec<f64>>,
{
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        let u = (self.kappa)(x)?;
        if u.len() != self.sys.m() {
            return Err(Error::InvalidArgument(format!(
                "feedback returns {} inputs, expected {}",
                u.len(),
                self.sys.m()
            )));
        }
        self.sys.field(x, &u)
    }
}

#[derive(Clone, Debug)]
pub struct LieDerivatives {
    pub lf: Expr,
    pub lg: Vec<Expr>,
}

/// Admissible input set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputBounds {
    /// `||u||_2 <= radius`.
    Ball { radius: f64 },
    /// `lower_j <= u_j <= upper_j`.
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

impl InputBounds {
    pub fn validate(&self, m: usize) -> Result<()> {
        match self {
            InputBounds::Ball { radius } => {
                if !(*radius > 0.0 && radius.is_finite()) {
                    return Err(Error::InvalidModel(format!("ball radius must be positive, got {radius}")));
                }
            }
            InputBounds::Box { lower, upper } => {
                if lower.len() != m || upper.len() != m {
                    return Err(Error::InvalidModel(format!("box bounds need {m} entries")));
                }
                for (j, (lo, hi)) in lower.iter().zip(upper).enumerate() {
                    if !(lo < &0.0 && &0.0 < hi) {
                        return Err(Error::InvalidModel(format!(
                            "input {} bounds [{lo}, {hi}] must contain 0 in the interior",
                            j + 1
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Box midpoint `m_j`.
    pub fn mid(&self, j: usize) -> f64 {
        match self {
            InputBounds::Ball { .. } => 0.0,
            InputBounds::Box { lower, upper } => 0.5 * (lower[j] + upper[j]),
        }
    }

    /// Box half-width `r_j`.
    pub fn half_width(&self, j: usize) -> f64 {
        match self {
            InputBounds::Ball { radius } => *radius,
            InputBounds::Box { lower, upper } => 0.5 * (upper[j] - lower[j]),
        }
    }

    /// `inf_{u in U} q . u`.
    pub fn support_min(&self, q: &[f64]) -> f64 {
        match self {
            InputBounds::Ball { radius } => -radius * q.iter().map(|v| v * v).sum::<f64>().sqrt(),
            InputBounds::Box { .. } => q
                .iter()
                .enumerate()
                .map(|(j, &qj)| self.mid(j) * qj - self.half_width(j) * qj.abs())
                .sum(),
        }
    }

    pub fn contains(&self, u: &[f64], tol: f64) -> bool {
        match self {
            InputBounds::Ball { radius } => u.iter().map(|v| v * v).sum::<f64>().sqrt() <= radius + tol,
            InputBounds::Box { lower, upper } => u
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(v, (lo, hi))| *v >= lo - tol && *v <= hi + tol),
        }
    }
}

/// State constraints `h_i(x) <= 1`.
#[derive(Clone, Debug)]
pub struct ConstraintSet {
    hs: Vec<Expr>,
}

impl ConstraintSet {
    pub fn new(hs: Vec<Expr>) -> Result<Self> {
        if hs.is_empty() {
            return Err(Error::InvalidModel("at least one state constraint is required".into()));
        }
        let n = hs[0].arity();
        if hs.iter().any(|h| h.arity() != n) {
            return Err(Error::InvalidModel("constraints have mixed arities".into()));
        }
        let origin = vec![0.0; n];
        for (i, h) in hs.iter().enumerate() {
            let v = h.eval(&origin)?;
            if v >= 1.0 {
                return Err(Error::InvalidModel(format!(
                    "origin violates constraint {} (h = {v})",
                    i + 1
                )));
            }
        }
        Ok(ConstraintSet { hs })
    }

    pub fn constraints(&self) -> &[Expr] {
        &self.hs
    }

    pub fn len(&self) -> usize {
        self.hs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hs.is_empty()
    }

    pub fn arity(&self) -> usize {
        self.hs[0].arity()
    }

    /// Pointwise maximum.
    pub fn h_max(&self, x: &[f64]) -> Result<f64> {
        let mut best = f64::NEG_INFINITY;
        for h in &self.hs {
            best = best.max(h.eval(x)?);
        }
        Ok(best)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy() -> ControlAffineSystem {
        let x = Expr::vars(2);
        let f = vec![Expr::constant(2, 0.0), -x[0].sin()];
        let g = vec![vec![Expr::constant(2, 1.0)], vec![Expr::constant(2, -1.0)]];
        let pi = std::f64::consts::PI;
        ControlAffineSystem::new(f, g, HyperBox::from_bounds(&[(-pi, pi), (-3.0, 4.0)])).unwrap()
    }

    #[test]
    fn toy_lie_derivatives() {
        let sys = toy();
        let x = Expr::vars(2);
        let v = x[0].square() + 2.0 * x[1].square();
        let ld = sys.lie_derivatives(&v).unwrap();
        for p in [[0.3f64, -0.7], [1.1, 2.0], [-2.5, 0.1]] {
            let lf = -4.0 * p[1] * p[0].sin();
            let lg = 2.0 * p[0] - 4.0 * p[1];
            assert!((ld.lf.eval(&p).unwrap() - lf).abs() < 1e-14);
            assert!((ld.lg[0].eval(&p).unwrap() - lg).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_v_has_zero_lie_derivatives() {
        let sys = toy();
        let ld = sys.lie_derivatives(&Expr::constant(2, 3.0)).unwrap();
        assert_eq!(ld.lf.as_const(), Some(0.0));
        assert_eq!(ld.lg[0].as_const(), Some(0.0));
    }

    #[test]
    fn arity_mismatch_rejected() {
        let sys = toy();
        assert!(sys.lie_derivatives(&Expr::var(3, 2)).is_err());
    }

    #[test]
    fn equilibrium_and_interior_checks() {
        let x = Expr::vars(1);
        let g = vec![vec![Expr::constant(1, 1.0)]];
        let bx = HyperBox::from_bounds(&[(-1.0, 1.0)]);
        assert!(ControlAffineSystem::new(vec![&x[0] + 1e-6], g.clone(), bx.clone()).is_err());
        let off = HyperBox::from_bounds(&[(0.0, 1.0)]);
        assert!(ControlAffineSystem::new(vec![x[0].clone()], g, off).is_err());
    }

    #[test]
    fn zero_feedback_gives_drift() {
        let sys = toy();
        let cl = sys.closed_loop_field(|_x: &[f64]| Ok(vec![0.0])).unwrap();
        let p = [0.4, -1.0];
        assert_eq!(cl.eval(&p).unwrap(), vec![0.0, -(0.4f64).sin()]);
        assert!(cl.eval(&[0.0, 0.0]).unwrap().iter().all(|v| v.abs() <= 1e-9));
        assert!(sys.closed_loop_field(|_x: &[f64]| Ok(vec![0.1])).is_err());
        let bad = sys.closed_loop_field(|x: &[f64]| Ok(vec![0.0; 1 + (x[0] != 0.0) as usize])).unwrap();
        assert!(bad.eval(&p).is_err());
    }

    #[test]
    fn box_bounds_midpoint_and_radius() {
        let b = InputBounds::Box {
            lower: vec![-1.0, -3.0],
            upper: vec![2.0, 1.0],
        };
        b.validate(2).unwrap();
        assert_eq!((b.mid(0), b.half_width(0)), (0.5, 1.5));
        assert_eq!((b.mid(1), b.half_width(1)), (-1.0, 2.0));
        // inf over box of q.u equals the vertex minimum
        let q = [1.0, -2.0];
        assert_eq!(b.support_min(&q), -1.0 - 2.0);
        let bad = InputBounds::Box {
            lower: vec![0.5],
            upper: vec![1.0],
        };
        assert!(bad.validate(1).is_err());
        assert!(InputBounds::Ball { radius: 0.0 }.validate(1).is_err());
    }

    #[test]
    fn constraints_require_safe_origin() {
        let x = Expr::vars(1);
        assert!(ConstraintSet::new(vec![&x[0] + 1.0]).is_err());
        assert!(ConstraintSet::new(vec![]).is_err());
        let cs = ConstraintSet::new(vec![x[0].clone(), -&x[0]]).unwrap();
        assert_eq!(cs.h_max(&[-0.5]).unwrap(), 0.5);
    }
}
