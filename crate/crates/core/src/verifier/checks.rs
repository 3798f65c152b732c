use serde::{Deserialize, Serialize};

use super::{refute_forall, Condition, Premise, VerificationVerdict, VerifyOptions};
use crate::certificates::ScaleBound;
use crate::error::{Error, Result};
use crate::expr::{Expr, HyperBox, Interval};
use crate::system::{ControlAffineSystem, InputBounds, LieDerivatives};

fn state_names(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("x{i}")).collect()
}

/// All sign patterns in `{-1, 1}^m`, in binary order with bit `j` set meaning
/// `sigma_j = -1`.
fn sign_patterns(m: usize) -> Vec<Vec<f64>> {
    (0..1usize << m)
        .map(|k| (0..m).map(|j| if k >> j & 1 == 1 { -1.0 } else { 1.0 }).collect())
        .collect()
}

fn widen_all(ld: &LieDerivatives, arity: usize) -> Result<LieDerivatives> {
    Ok(LieDerivatives {
        lf: ld.lf.widen(arity)?,
        lg: ld.lg.iter().map(|e| e.widen(arity)).collect::<Result<_, _>>()?,
    })
}

/// Conditions for "every point of `{h = 1}` admits an input that strictly
/// decreases `h`": one for a ball, one per sign pattern of `L_g h` for a box.
pub fn cbf_conditions(h: &Expr, sys: &ControlAffineSystem, bounds: &InputBounds) -> Result<Vec<Condition>> {
    bounds.validate(sys.m())?;
    let n = sys.n();
    let ld = sys.lie_derivatives(h)?;
    let names = state_names(n);
    let zero = Expr::constant(n, 0.0);
    match bounds {
        InputBounds::Ball { radius } => Ok(vec![Condition::new(
            "cbf_0",
            names,
            vec![Premise::eq(h.clone(), 1.0)],
            ld.lf.clone(),
            *radius * Expr::norm2(&ld.lg),
            sys.domain().clone(),
        )?]),
        InputBounds::Box { .. } => sign_patterns(sys.m())
            .into_iter()
            .enumerate()
            .map(|(k, sigma)| {
                let mut premises = vec![Premise::eq(h.clone(), 1.0)];
                let mut lhs = ld.lf.clone();
                for (j, s) in sigma.iter().enumerate() {
                    premises.push(Premise::ge((*s * &ld.lg[j]).simplify(), 0.0));
                    lhs = lhs + (bounds.mid(j) - bounds.half_width(j) * s) * &ld.lg[j];
                }
                Condition::new(
                    format!("cbf_{k}"),
                    names.clone(),
                    premises,
                    lhs.simplify(),
                    zero.clone(),
                    sys.domain().clone(),
                )
            })
            .collect(),
    }
}

pub fn check_cbf(
    h: &Expr,
    sys: &ControlAffineSystem,
    bounds: &InputBounds,
    opts: &VerifyOptions,
) -> Result<VerificationVerdict> {
    run_all(&cbf_conditions(h, sys, bounds)?, opts)
}

/// CLF decrease on `{h <= 1} \ {V < base_level}`.
pub fn clf_conditions(
    v: &Expr,
    h: &Expr,
    sys: &ControlAffineSystem,
    bounds: &InputBounds,
    base_level: f64,
) -> Result<Vec<Condition>> {
    bounds.validate(sys.m())?;
    if !(base_level > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "base level must be positive, got {base_level}"
        )));
    }
    let n = sys.n();
    let ld = sys.lie_derivatives(v)?;
    let names = state_names(n);
    let region = || vec![Premise::le(h.clone(), 1.0), Premise::ge(v.clone(), base_level)];
    match bounds {
        InputBounds::Ball { radius } => Ok(vec![Condition::new(
            "clf_0",
            names,
            region(),
            ld.lf.clone(),
            *radius * Expr::norm2(&ld.lg),
            sys.domain().clone(),
        )?]),
        InputBounds::Box { .. } => sign_patterns(sys.m())
            .into_iter()
            .enumerate()
            .map(|(k, sigma)| {
                let mut premises = region();
                let mut lhs = ld.lf.clone();
                for (j, s) in sigma.iter().enumerate() {
                    premises.push(Premise::ge((*s * &ld.lg[j]).simplify(), 0.0));
                    lhs = lhs + (bounds.mid(j) - bounds.half_width(j) * s) * &ld.lg[j];
                }
                Condition::new(
                    format!("clf_{k}"),
                    names.clone(),
                    premises,
                    lhs.simplify(),
                    Expr::constant(n, 0.0),
                    sys.domain().clone(),
                )
            })
            .collect(),
    }
}

pub fn check_clf(
    v: &Expr,
    h: &Expr,
    sys: &ControlAffineSystem,
    bounds: &InputBounds,
    base_level: f64,
    opts: &VerifyOptions,
) -> Result<VerificationVerdict> {
    run_all(&clf_conditions(v, h, sys, bounds, base_level)?, opts)
}

/// Encoding of the dual compatibility condition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompatEncoding {
    /// Auxiliary variables eliminated analytically.
    Reduced,
    /// All multipliers kept as search variables, with thin equality premises.
    Unreduced,
}

/// Dual (Farkas) form of "on the band `1 - eps <= h <= 1` one admissible input
/// strictly decreases both `V` and `h`".
///
/// Reduced ball form, over `(x, l1, l2)` with `t = 1 - l1 - l2`:
/// `l1 + l2 <= 1`, `||l1 LgV + l2 Lgh|| <= t  =>  l1 LfV + l2 Lfh < ub t`.
///
/// Reduced box form, over `(x, l1)` with `l2 = 1 - l1` and `s = l1 LgV + l2 Lgh`,
/// one condition per sign pattern `sigma` of `s`:
/// `sigma_j s_j >= 0  =>  l1 LfV + l2 Lfh + sum_j (m_j - r_j sigma_j) s_j < 0`.
/// The multiplier slice `l1 = l2 = 0` holds trivially for a box with nonempty
/// interior and is not searched.
pub fn compat_conditions(
    v: &Expr,
    h: &Expr,
    sys: &ControlAffineSystem,
    bounds: &InputBounds,
    eps: f64,
    encoding: CompatEncoding,
) -> Result<Vec<Condition>> {
    bounds.validate(sys.m())?;
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::InvalidArgument(format!("eps must lie in [0, 1), got {eps}")));
    }
    let n = sys.n();
    let m = sys.m();
    let ldv = sys.lie_derivatives(v)?;
    let ldh = sys.lie_derivatives(h)?;
    let unit = Interval::new(0.0, 1.0);
    let band = |arity: usize| -> Result<Premise> {
        let hw = h.widen(arity)?;
        Ok(if eps == 0.0 {
            Premise::eq(hw, 1.0)
        } else {
            Premise::range(hw, 1.0 - eps, 1.0)
        })
    };
    let state = sys.domain().intervals().to_vec();

    match (bounds, encoding) {
        (InputBounds::Ball { radius }, CompatEncoding::Reduced) => {
            let k = n + 2;
            let (lv, lh) = (widen_all(&ldv, k)?, widen_all(&ldh, k)?);
            let l1 = Expr::var(k, n);
            let l2 = Expr::var(k, n + 1);
            let t = 1.0 - &l1 - &l2;
            let s: Vec<Expr> = (0..m).map(|j| (&l1 * &lv.lg[j] + &l2 * &lh.lg[j]).simplify()).collect();
            let mut names = state_names(n);
            names.extend(["lambda1".to_string(), "lambda2".to_string()]);
            let mut dom = state;
            dom.extend([unit, unit]);
            let cond = Condition::new(
                "compat_0",
                names,
                vec![
                    band(k)?,
                    Premise::le(&l1 + &l2, 1.0),
                    Premise::le(Expr::norm2(&s) - &t, 0.0),
                ],
                (&l1 * &lv.lf + &l2 * &lh.lf).simplify(),
                *radius * &t,
                HyperBox::new(dom),
            )?;
            // t >= ||s|| >= |s_j| on the premise set
            let lf = &l1 * &lv.lf + &l2 * &lh.lf;
            let mut cond = cond.with_gap_bound((&lf - *radius * Expr::norm2(&s)).simplify())?;
            for sj in &s {
                cond = cond.with_gap_bound((&lf - *radius * sj).simplify())?;
                cond = cond.with_gap_bound((&lf + *radius * sj).simplify())?;
            }
            Ok(vec![cond])
        }
        (InputBounds::Ball { radius }, CompatEncoding::Unreduced) => {
            let k = n + 3 + m;
            let (lv, lh) = (widen_all(&ldv, k)?, widen_all(&ldh, k)?);
            let l1 = Expr::var(k, n);
            let l2 = Expr::var(k, n + 1);
            let t = Expr::var(k, n + 2);
            let y: Vec<Expr> = (0..m).map(|j| Expr::var(k, n + 3 + j)).collect();
            let mut premises = vec![band(k)?, Premise::eq(&l1 + &l2 + &t, 1.0)];
            for j in 0..m {
                premises.push(Premise::eq((&l1 * &lv.lg[j] + &l2 * &lh.lg[j] + &y[j]).simplify(), 0.0));
            }
            premises.push(Premise::le(Expr::norm2(&y) - &t, 0.0));
            let mut names = state_names(n);
            names.extend(["lambda1".to_string(), "lambda2".to_string(), "tau".to_string()]);
            names.extend((1..=m).map(|j| format!("y{j}")));
            let mut dom = state;
            dom.extend([unit, unit, unit]);
            dom.extend(std::iter::repeat_n(Interval::new(-1.0, 1.0), m));
            Ok(vec![Condition::new(
                "compat_0",
                names,
                premises,
                (&l1 * &lv.lf + &l2 * &lh.lf).simplify(),
                *radius * &t,
                HyperBox::new(dom),
            )?
            .with_gap_bound((&l1 * &lv.lf + &l2 * &lh.lf - *radius * Expr::norm2(&y)).simplify())?])
        }
        (InputBounds::Box { .. }, CompatEncoding::Reduced) => {
            let k = n + 1;
            let (lv, lh) = (widen_all(&ldv, k)?, widen_all(&ldh, k)?);
            let l1 = Expr::var(k, n);
            let l2 = 1.0 - &l1;
            let s: Vec<Expr> = (0..m).map(|j| (&l1 * &lv.lg[j] + &l2 * &lh.lg[j]).simplify()).collect();
            let base = &l1 * &lv.lf + &l2 * &lh.lf;
            let mut names = state_names(n);
            names.push("lambda1".to_string());
            let mut dom = state;
            dom.push(unit);
            let dom = HyperBox::new(dom);
            sign_patterns(m)
                .into_iter()
                .enumerate()
                .map(|(c, sigma)| {
                    let mut premises = vec![band(k)?];
                    let mut lhs = base.clone();
                    for (j, sg) in sigma.iter().enumerate() {
                        premises.push(Premise::ge((*sg * &s[j]).simplify(), 0.0));
                        lhs = lhs + (bounds.mid(j) - bounds.half_width(j) * sg) * &s[j];
                    }
                    Condition::new(
                        format!("compat_{c}"),
                        names.clone(),
                        premises,
                        lhs.simplify(),
                        Expr::constant(k, 0.0),
                        dom.clone(),
                    )
                })
                .collect()
        }
        (InputBounds::Box { lower, upper }, CompatEncoding::Unreduced) => {
            let k = n + 2 + 2 * m;
            let (lv, lh) = (widen_all(&ldv, k)?, widen_all(&ldh, k)?);
            let l1 = Expr::var(k, n);
            let l2 = Expr::var(k, n + 1);
            let lp: Vec<Expr> = (0..m).map(|j| Expr::var(k, n + 2 + j)).collect();
            let lm: Vec<Expr> = (0..m).map(|j| Expr::var(k, n + 2 + m + j)).collect();
            let total = Expr::sum(k, lp.iter().chain(&lm).cloned()) + &l1 + &l2;
            let mut premises = vec![band(k)?, Premise::eq(total.simplify(), 1.0)];
            for j in 0..m {
                premises.push(Premise::eq(
                    (&l1 * &lv.lg[j] + &l2 * &lh.lg[j] + &lp[j] - &lm[j]).simplify(),
                    0.0,
                ));
            }
            let rhs = Expr::sum(k, (0..m).map(|j| upper[j] * &lp[j] - lower[j] * &lm[j]));
            let mut names = state_names(n);
            names.extend(["lambda1".to_string(), "lambda2".to_string()]);
            names.extend((1..=m).map(|j| format!("lambda_plus{j}")));
            names.extend((1..=m).map(|j| format!("lambda_minus{j}")));
            let mut dom = state;
            dom.extend(std::iter::repeat_n(unit, 2 + 2 * m));
            Ok(vec![Condition::new(
                "compat_0",
                names,
                premises,
                (&l1 * &lv.lf + &l2 * &lh.lf).simplify(),
                rhs.simplify(),
                HyperBox::new(dom),
            )?])
        }
    }
}

pub fn check_compat(
    v: &Expr,
    h: &Expr,
    sys: &ControlAffineSystem,
    bounds: &InputBounds,
    eps: f64,
    encoding: CompatEncoding,
    opts: &VerifyOptions,
) -> Result<VerificationVerdict> {
    run_all(&compat_conditions(v, h, sys, bounds, eps, encoding)?, opts)
}

/// Outcome of scanning a band-width schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSearch {
    pub eps: f64,
    /// Scaling factor of `V` used for the accepted candidate (1 if unscaled).
    pub alpha: f64,
    pub verdict: VerificationVerdict,
    pub tried: Vec<(f64, VerificationVerdict)>,
}

/// First band width in `schedule` for which compatibility verifies. With a
/// scale bound, `V` is rescaled to `alpha(eps) V` before each check.
#[allow(clippy::too_many_arguments)]
pub fn find_epsilon(
    v: &Expr,
    h: &Expr,
    sys: &ControlAffineSystem,
    bounds: &InputBounds,
    schedule: &[f64],
    scale: Option<&ScaleBound>,
    encoding: CompatEncoding,
    opts: &VerifyOptions,
) -> Result<EpsilonSearch> {
    let search = scan_epsilon(v, h, sys, bounds, schedule, scale, encoding, opts)?;
    if search.verdict.is_verified() {
        return Ok(search);
    }
    let summary: Vec<String> = search.tried.iter().map(|(e, v)| format!("{e}: {}", v.label())).collect();
    Err(Error::Unverified(format!(
        "no band width in the schedule verifies ({})",
        summary.join(", ")
    )))
}

/// Like `find_epsilon`, but a schedule without a verified candidate is
/// reported as a search whose `verdict` combines all attempts (Falsified
/// first) and whose `eps` is the last candidate tried.
#[allow(clippy::too_many_arguments)]
pub fn scan_epsilon(
    v: &Expr,
    h: &Expr,
    sys: &ControlAffineSystem,
    bounds: &InputBounds,
    schedule: &[f64],
    scale: Option<&ScaleBound>,
    encoding: CompatEncoding,
    opts: &VerifyOptions,
) -> Result<EpsilonSearch> {
    if schedule.is_empty() {
        return Err(Error::Unverified("empty band-width schedule".into()));
    }
    let mut tried = Vec::new();
    let mut last = (0.0, 1.0);
    for &eps in schedule {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::InvalidArgument(format!("band width {eps} outside (0, 1)")));
        }
        let alpha = match scale {
            Some(s) => s.with_eps(eps)?.alpha,
            None => 1.0,
        };
        last = (eps, alpha);
        let vs = (alpha * v).simplify();
        let verdict = check_compat(&vs, h, sys, bounds, eps, encoding, opts)?;
        tried.push((eps, verdict.clone()));
        if verdict.is_verified() {
            return Ok(EpsilonSearch {
                eps,
                alpha,
                verdict,
                tried,
            });
        }
    }
    Ok(EpsilonSearch {
        eps: last.0,
        alpha: last.1,
        verdict: VerificationVerdict::combine(tried.iter().map(|(_, v)| v.clone()).collect()),
        tried,
    })
}

pub(crate) fn run_all(conds: &[Condition], opts: &VerifyOptions) -> Result<VerificationVerdict> {
    let mut verdicts = Vec::with_capacity(conds.len());
    for c in conds {
        let v = refute_forall(c, opts)?;
        let stop = v.is_falsified();
        verdicts.push(v);
        if stop {
            break;
        }
    }
    Ok(VerificationVerdict::combine(verdicts))
}
