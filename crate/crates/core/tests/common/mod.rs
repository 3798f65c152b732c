#![allow(dead_code)]

use std::path::{Path, PathBuf};

use clbf::cli::{ProjectConfig, Problem, RunManifest};
use clbf::expr::tape::Tape;
use clbf::system::InputBounds;
use clbf::verifier::{
    cbf_conditions, clf_conditions, compat_conditions, local_outer_condition, Condition, VerificationVerdict,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

pub fn load(name: &str) -> (ProjectConfig, String, Problem) {
    let (cfg, hash) = ProjectConfig::load(&config_path(name)).expect("bundled config loads");
    let pb = Problem::from_config(&cfg).expect("bundled config resolves");
    (cfg, hash, pb)
}

/// Every condition behind a fully verified manifest, rebuilt with the same
/// parameters the pipeline used.
pub fn verified_conditions(cfg: &ProjectConfig, pb: &Problem, m: &RunManifest) -> Vec<Condition> {
    let eps = m.eps.expect("eps");
    let alpha = m.alpha.expect("alpha");
    let r0 = m.local_report.as_ref().expect("local report").r0;
    let vs = (alpha * &pb.v).simplify();
    let mut out = cbf_conditions(&pb.h, &pb.sys, &pb.bounds).unwrap();
    out.push(local_outer_condition(&pb.local, &pb.sys, r0).unwrap());
    out.extend(compat_conditions(&vs, &pb.h, &pb.sys, &pb.bounds, eps, cfg.patch.compat_encoding).unwrap());
    out.extend(clf_conditions(&vs, &pb.h, &pb.sys, &pb.bounds, alpha * pb.local.c).unwrap());
    out
}

#[derive(Clone, Debug, Default)]
pub struct SampleStats {
    pub accepted: usize,
    pub attempts: usize,
    pub violations: usize,
    /// Largest `lhs - rhs` among accepted points.
    pub max_gap: f64,
    pub worst: Vec<f64>,
}

/// Premise-conditioned sampling of `cond`: uniform draws in the domain,
/// two-sided premises reached by Newton projection onto the nearest bound,
/// one-sided premises by rejection. A point is accepted once every premise
/// residual is at most `tol`; it violates the conclusion when
/// `lhs - rhs >= 0`.
pub fn sample_condition(cond: &Condition, count: usize, seed: u64, tol: f64) -> SampleStats {
    let n = cond.arity();
    let proj: Vec<usize> = (0..cond.premises.len())
        .filter(|&i| cond.premises[i].lo.is_finite() && cond.premises[i].hi.is_finite())
        .collect();
    let mut outs = vec![cond.gap()];
    outs.extend(cond.premises.iter().map(|p| p.expr.clone()));
    for &i in &proj {
        outs.extend(cond.premises[i].expr.gradient().expect("projected premises are smooth"));
    }
    let tape = Tape::compile(&outs);
    let np = cond.premises.len();
    let resid = |i: usize, v: f64| {
        let p = &cond.premises[i];
        (p.lo - v).max(v - p.hi).max(0.0)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut st = SampleStats {
        max_gap: f64::NEG_INFINITY,
        ..SampleStats::default()
    };
    let dom = &cond.domain;
    let cap = count.saturating_mul(400).max(1000);
    while st.accepted < count && st.attempts < cap {
        st.attempts += 1;
        let mut x: Vec<f64> = dom.intervals().iter().map(|iv| rng.random_range(iv.lo..=iv.hi)).collect();
        let mut ok = false;
        for _ in 0..60 {
            let Ok(vals) = tape.eval(&x) else { break };
            let worst = (0..np).map(|i| resid(i, vals[1 + i])).fold(0.0, f64::max);
            if worst <= tol {
                ok = true;
                break;
            }
            // project the most violated two-sided premise
            let Some((k, &i)) = proj
                .iter()
                .enumerate()
                .filter(|(_, &i)| resid(i, vals[1 + i]) > tol)
                .max_by(|a, b| resid(*a.1, vals[1 + *a.1]).total_cmp(&resid(*b.1, vals[1 + *b.1])))
            else {
                break;
            };
            let p = &cond.premises[i];
            let v = vals[1 + i];
            let target = if v < p.lo { p.lo } else { p.hi };
            let g = &vals[1 + np + k * n..1 + np + (k + 1) * n];
            let gg: f64 = g.iter().map(|a| a * a).sum();
            if !(gg > 0.0) {
                break;
            }
            let step = (v - target) / gg;
            x.iter_mut().zip(g).for_each(|(xi, gi)| *xi -= step * gi);
            if !dom.contains(&x) {
                break;
            }
        }
        if !ok || !dom.contains(&x) {
            continue;
        }
        let Ok(vals) = tape.eval(&x) else { continue };
        st.accepted += 1;
        if vals[0] > st.max_gap {
            st.max_gap = vals[0];
            st.worst = x.clone();
        }
        if vals[0] >= 0.0 {
            st.violations += 1;
        }
    }
    st
}

/// Residuals and gap of `cond` at `x`: the delta-witness test.
pub fn witness_valid(cond: &Condition, x: &[f64], delta: f64) -> bool {
    if x.len() != cond.arity() || !cond.domain.contains(x) {
        return false;
    }
    let res_ok = cond.premises.iter().all(|p| match p.expr.eval(x) {
        Ok(v) => (p.lo - v).max(v - p.hi) <= delta,
        Err(_) => false,
    });
    let gap = match (cond.lhs.eval(x), cond.rhs.eval(x)) {
        (Ok(l), Ok(r)) => l - r,
        _ => return false,
    };
    res_ok && gap >= -delta
}

pub fn witness_of(v: &VerificationVerdict) -> Option<&[f64]> {
    match v {
        VerificationVerdict::Falsified { witness, .. } => Some(witness),
        _ => None,
    }
}

/// Points of `{l >= 0, sum l = 1}` in `k` coordinates on a grid of step `1/res`.
fn simplex_grid(k: usize, res: usize, f: &mut impl FnMut(&[f64])) {
    fn rec(i: usize, k: usize, left: usize, res: usize, cur: &mut Vec<f64>, f: &mut impl FnMut(&[f64])) {
        if i + 1 == k {
            cur.push(left as f64 / res as f64);
            f(cur);
            cur.pop();
            return;
        }
        for a in 0..=left {
            cur.push(a as f64 / res as f64);
            rec(i + 1, k, left - a, res, cur, f);
            cur.pop();
        }
    }
    rec(0, k, res, res, &mut Vec::with_capacity(k), f);
}

/// Local grids of shrinking step around `start`, each point clamped to be
/// nonnegative; `value` returns `None` for inadmissible points.
fn refine(start: Vec<f64>, step0: f64, value: &impl Fn(&[f64]) -> Option<f64>) -> (Vec<f64>, f64) {
    let k = start.len();
    let mut best = start;
    let mut bv = value(&best).unwrap_or(f64::INFINITY);
    let mut step = step0;
    for _ in 0..8 {
        step /= 4.0;
        let center = best.clone();
        let span = 4i64;
        let total = (2 * span + 1).pow(k as u32);
        for idx in 0..total {
            let mut r = idx;
            let p: Vec<f64> = center
                .iter()
                .map(|c| {
                    let o = (r % (2 * span + 1)) - span;
                    r /= 2 * span + 1;
                    (c + o as f64 * step).max(0.0)
                })
                .collect();
            if let Some(v) = value(&p) {
                if v < bv {
                    bv = v;
                    best = p;
                }
            }
        }
    }
    (best, bv)
}

/// Smallest sampled dual value of the linear alternative for `A u < b, lower < u < upper`
/// written as `[A; I; -I] u < [b; upper; -lower]`. Multipliers are
/// `(l, l+, l-)` with `l+ - l- = -A^T l` pinned, `min(l+, l-) = mu` free,
/// normalized to unit sum; the value is `l.b + sum(l+ upper - l- lower)`.
pub fn box_dual_min(a: &DMatrix<f64>, b: &DVector<f64>, lower: &[f64], upper: &[f64]) -> f64 {
    let (n, m) = a.shape();
    let mus = [0.0, 0.01, 0.1, 1.0];
    let value = |l: &[f64], mu: &[f64]| -> Option<f64> {
        let mut num: f64 = (0..n).map(|i| l[i] * b[i]).sum();
        let mut total: f64 = l.iter().sum();
        for j in 0..m {
            let d = -(0..n).map(|i| a[(i, j)] * l[i]).sum::<f64>();
            let lp = d.max(0.0) + mu[j];
            let lm = (-d).max(0.0) + mu[j];
            num += lp * upper[j] - lm * lower[j];
            total += lp + lm;
        }
        (total > 0.0).then(|| num / total)
    };
    let mut best = f64::INFINITY;
    let mut arg = vec![0.0; n];
    let mut mu = vec![0.0; m];
    let nm = mus.len().pow(m as u32);
    for idx in 0..nm {
        let mut r = idx;
        for mj in mu.iter_mut() {
            *mj = mus[r % mus.len()];
            r /= mus.len();
        }
        // l = 0: only the box rows
        if let Some(v) = value(&vec![0.0; n], &mu) {
            best = best.min(v);
        }
        simplex_grid(n, 100, &mut |l| {
            if let Some(v) = value(l, &mu) {
                if v < best {
                    best = v;
                    arg.copy_from_slice(l);
                }
            }
        });
    }
    let zero = vec![0.0; m];
    let (_, refined) = refine(arg, 0.01, &|l| {
        let s: f64 = l.iter().sum();
        (s > 0.0).then(|| value(&l.iter().map(|v| v / s).collect::<Vec<_>>(), &zero)).flatten()
    });
    best.min(refined)
}

/// Smallest dual value of the conic alternative for `A u < b, ||u|| <= bound`.
/// Multipliers `l >= 0` with `y = -A^T l` and `||y|| <= tau` certify
/// infeasibility when `l.b + bound tau <= 0`; taking `tau = ||A^T l||` and
/// `sum l = 1` leaves the convex function `l.b + bound ||A^T l||` on the
/// simplex. Its minimum equals the best primal margin
/// `max_u min_i (b - A u)_i`. Grid of step 1e-2, then compass search with
/// directions that include the simplex edges, plus the vertices of the kink
/// set `A^T l = 0` on each face, where the compass search can stall.
pub fn ball_dual_min(a: &DMatrix<f64>, b: &DVector<f64>, bound: f64) -> f64 {
    let (n, m) = a.shape();
    let phi = |l: &[f64]| -> f64 {
        let ny = (0..m)
            .map(|j| (0..n).map(|i| a[(i, j)] * l[i]).sum::<f64>().powi(2))
            .sum::<f64>()
            .sqrt();
        (0..n).map(|i| l[i] * b[i]).sum::<f64>() + bound * ny
    };
    // free coordinates l_1..l_{n-1}, l_n = 1 - sum
    let value = |p: &[f64]| -> Option<f64> {
        let last = 1.0 - p.iter().sum::<f64>();
        if p.iter().any(|v| *v < 0.0) || last < -1e-14 {
            return None;
        }
        let mut l = p.to_vec();
        l.push(last.max(0.0));
        Some(phi(&l))
    };
    let mut best = f64::INFINITY;
    let mut arg = vec![0.0; n - 1];
    simplex_grid(n, 100, &mut |l| {
        let v = phi(l);
        if v < best {
            best = v;
            arg.copy_from_slice(&l[..n - 1]);
        }
    });
    for support in 1u32..1 << n {
        let idx: Vec<usize> = (0..n).filter(|i| support >> i & 1 == 1).collect();
        // [A_S^T; 1^T] l_S = [0; 1]
        let lhs = DMatrix::from_fn(m + 1, idx.len(), |r, c| if r < m { a[(idx[c], r)] } else { 1.0 });
        let mut rhs = DVector::zeros(m + 1);
        rhs[m] = 1.0;
        let svd = lhs.clone().svd(true, true);
        if svd.rank(1e-10) < idx.len() {
            continue;
        }
        let Ok(ls) = svd.solve(&rhs, 1e-12) else { continue };
        if (&lhs * &ls - &rhs).norm() > 1e-10 || ls.iter().any(|v| *v < 0.0) {
            continue;
        }
        let mut l = vec![0.0; n];
        idx.iter().zip(ls.iter()).for_each(|(&i, v)| l[i] = *v);
        best = best.min(phi(&l));
    }
    let dirs: Vec<Vec<f64>> = match n - 1 {
        0 => return best,
        1 => vec![vec![1.0], vec![-1.0]],
        _ => (0..16)
            .map(|k| {
                let t = std::f64::consts::PI * k as f64 / 8.0;
                // exact zeros keep the search on the faces l_1 = 0 and l_2 = 0
                let snap = |v: f64| if v.abs() < 1e-12 { 0.0 } else { v };
                vec![snap(t.cos()), snap(t.sin())]
            })
            .collect(),
    };
    let mut step = 0.01;
    while step > 1e-13 {
        let moved = dirs.iter().find_map(|d| {
            let p: Vec<f64> = arg.iter().zip(d).map(|(x, dx)| x + step * dx).collect();
            value(&p).filter(|v| *v < best).map(|v| (p, v))
        });
        match moved {
            Some((p, v)) => {
                arg = p;
                best = v;
            }
            None => step *= 0.5,
        }
    }
    best
}

pub fn random_matrix(rng: &mut ChaCha8Rng, n: usize, m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, m, |_, _| rng.random_range(-2.0..=2.0))
}

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-2.0..=2.0))
}

#[derive(Debug, Default)]
pub struct FarkasTally {
    pub instances: usize,
    pub feasible: usize,
    pub infeasible: usize,
    /// Primal slack within the grid tolerance of zero.
    pub degenerate: usize,
    pub disagreements: usize,
    /// Largest `|primal - dual|`; the conic dual is normalized so the two
    /// optima coincide. NaN for the linear battery.
    pub max_value_gap: f64,
}

/// Primal brute force against sampled duals. Disagreement: the primal is
/// feasible yet a sampled multiplier has value `<= -1e-12`, or the primal is
/// infeasible by more than `tol` yet no sampled multiplier reaches `<= 0`.
pub fn farkas_battery(count: usize, seed: u64, ball: bool, tol: f64) -> FarkasTally {
    use clbf::verifier::farkas_primal_slack;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = FarkasTally {
        max_value_gap: if ball { 0.0 } else { f64::NAN },
        ..Default::default()
    };
    for _ in 0..count {
        let n = rng.random_range(1..=3);
        let m = rng.random_range(1..=2);
        let a = random_matrix(&mut rng, n, m);
        let b = random_vector(&mut rng, n);
        let (bounds, dual) = if ball {
            let r: f64 = rng.random_range(0.1..=2.0);
            (InputBounds::Ball { radius: r }, ball_dual_min(&a, &b, r))
        } else {
            let lower: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..=1.5)).collect();
            let upper: Vec<f64> = lower.iter().map(|l| l + rng.random_range(0.1..=2.0)).collect();
            let d = box_dual_min(&a, &b, &lower, &upper);
            (InputBounds::Box { lower, upper }, d)
        };
        let slack = farkas_primal_slack(&a, &b, &bounds);
        t.instances += 1;
        if ball {
            t.max_value_gap = t.max_value_gap.max((slack - dual).abs());
        }
        if slack.abs() <= tol {
            t.degenerate += 1;
            if slack > 0.0 && dual <= -1e-12 {
                t.disagreements += 1;
            }
            continue;
        }
        if slack > 0.0 {
            t.feasible += 1;
            if dual <= -1e-12 {
                t.disagreements += 1;
            }
        } else {
            t.infeasible += 1;
            if dual > 0.0 {
                t.disagreements += 1;
            }
        }
    }
    t
}
