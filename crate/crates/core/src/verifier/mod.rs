//! Interval branch-and-prune checker for universally quantified implications
//! `premises(z) => lhs(z) < rhs(z)` over a box of variables `z`.
//!
//! A box is discarded once some premise interval misses its target range or
//! the conclusion gap `lhs - rhs` is provably negative. Undecided boxes are
//! bisected along their widest side. The search order is fixed: boxes are
//! taken from a depth-first stack in batches of [`BATCH`] and the results of a
//! batch are merged in stack order, so verdicts and witnesses do not depend on
//! the number of worker threads.

mod checks;
mod farkas;
mod local;
pub mod smt2;

pub use checks::{
    cbf_conditions, check_cbf, check_clf, check_compat, clf_conditions, compat_conditions, find_epsilon, scan_epsilon,
    CompatEncoding, EpsilonSearch,
};
pub use farkas::{farkas_feasible_oracle, farkas_primal_slack};
pub use local::{check_local, local_inner_radius, local_outer_condition, LocalCertificate, LocalReport};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::tape::Tape;
use crate::expr::{Expr, HyperBox, Interval};

/// Boxes handed to the worker pool per round.
pub const BATCH: usize = 4096;

/// Largest ratio between the relative side lengths of a box before the
/// longest side is forced to split.
const ASPECT: f64 = 16.0;

#[derive(Clone, Debug)]
pub struct Premise {
    pub expr: Expr,
    pub lo: f64,
    pub hi: f64,
}

impl Premise {
    /// `expr = value`.
    pub fn eq(expr: Expr, value: f64) -> Self {
        Premise {
            expr,
            lo: value,
            hi: value,
        }
    }

    /// `expr <= hi`.
    pub fn le(expr: Expr, hi: f64) -> Self {
        Premise {
            expr,
            lo: f64::NEG_INFINITY,
            hi,
        }
    }

    /// `expr >= lo`.
    pub fn ge(expr: Expr, lo: f64) -> Self {
        Premise {
            expr,
            lo,
            hi: f64::INFINITY,
        }
    }

    pub fn range(expr: Expr, lo: f64, hi: f64) -> Self {
        Premise { expr, lo, hi }
    }

    fn residual(&self, v: f64) -> f64 {
        (self.lo - v).max(v - self.hi).max(0.0)
    }
}

#[derive(Clone, Debug)]
pub struct Condition {
    pub name: String,
    pub var_names: Vec<String>,
    pub premises: Vec<Premise>,
    pub lhs: Expr,
    pub rhs: Expr,
    pub domain: HyperBox,
    /// Expressions bounding `lhs - rhs` from above wherever the premises hold.
    /// They only serve pruning: a box is discarded once one of them is
    /// provably negative on it.
    pub gap_bounds: Vec<Expr>,
}

impl Condition {
    pub fn new(
        name: impl Into<String>,
        var_names: Vec<String>,
        premises: Vec<Premise>,
        lhs: Expr,
        rhs: Expr,
        domain: HyperBox,
    ) -> Result<Self> {
        let n = domain.dim();
        if var_names.len() != n
            || lhs.arity() != n
            || rhs.arity() != n
            || premises.iter().any(|p| p.expr.arity() != n || !(p.lo <= p.hi))
        {
            return Err(Error::InvalidArgument("condition: inconsistent arity or premise range".into()));
        }
        Ok(Condition {
            name: name.into(),
            var_names,
            premises,
            lhs,
            rhs,
            domain,
            gap_bounds: Vec::new(),
        })
    }

    /// Adds an upper bound of `lhs - rhs` valid on the premise set. Soundness
    /// of the bound is the caller's obligation.
    pub fn with_gap_bound(mut self, bound: Expr) -> Result<Self> {
        if bound.arity() != self.arity() {
            return Err(Error::InvalidArgument("condition: gap bound arity mismatch".into()));
        }
        self.gap_bounds.push(bound);
        Ok(self)
    }

    pub fn arity(&self) -> usize {
        self.domain.dim()
    }

    pub fn gap(&self) -> Expr {
        (&self.lhs - &self.rhs).simplify()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum VerificationVerdict {
    Verified {
        delta: f64,
        boxes_processed: u64,
    },
    Falsified {
        witness: Vec<f64>,
        premise_residuals: Vec<f64>,
        /// `lhs - rhs` at the witness.
        conclusion: f64,
    },
    Unknown {
        reason: String,
    },
}

impl VerificationVerdict {
    pub fn is_verified(&self) -> bool {
        matches!(self, VerificationVerdict::Verified { .. })
    }

    pub fn is_falsified(&self) -> bool {
        matches!(self, VerificationVerdict::Falsified { .. })
    }

    pub fn label(&self) -> &'static str {
        match self {
            VerificationVerdict::Verified { .. } => "verified",
            VerificationVerdict::Falsified { .. } => "falsified",
            VerificationVerdict::Unknown { .. } => "unknown",
        }
    }

    /// Conjunction of sub-verdicts: the first falsification wins, then any
    /// unknown, otherwise verified with summed box counts.
    pub fn combine(verdicts: Vec<VerificationVerdict>) -> VerificationVerdict {
        if let Some(f) = verdicts.iter().find(|v| v.is_falsified()) {
            return f.clone();
        }
        if let Some(u) = verdicts.iter().find(|v| matches!(v, VerificationVerdict::Unknown { .. })) {
            return u.clone();
        }
        let mut delta = 0.0;
        let mut total = 0;
        for v in &verdicts {
            if let VerificationVerdict::Verified { delta: d, boxes_processed } = v {
                delta = *d;
                total += boxes_processed;
            }
        }
        VerificationVerdict::Verified {
            delta,
            boxes_processed: total,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct VerifyOptions {
    pub delta: f64,
    pub min_width: f64,
    pub budget: u64,
    pub workers: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            delta: 1e-4,
            min_width: 1e-6,
            budget: 10_000_000,
            workers: 1,
        }
    }
}

impl VerifyOptions {
    fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) || !(self.min_width > 0.0) || self.workers == 0 {
            return Err(Error::InvalidArgument(
                "verifier options need delta > 0, min_width > 0 and at least one worker".into(),
            ));
        }
        Ok(())
    }
}

enum Outcome {
    Pruned,
    Split(HyperBox, HyperBox),
    Witness(Vec<f64>, Vec<f64>, f64),
    Undecided,
}

struct Scratch {
    islots: Vec<Option<Interval>>,
    iout: Vec<Option<Interval>>,
    pout: Vec<Option<Interval>>,
    dout: Vec<Option<Interval>>,
    slots: Vec<f64>,
    out: Vec<f64>,
}

struct Prepared<'a> {
    cond: &'a Condition,
    /// Premises, then the gap, then the gap bounds.
    tape: Tape,
    /// Row-major partial derivatives of the outputs of `tape`.
    dtape: Tape,
    /// Outputs whose derivative rows are available.
    smooth: Vec<bool>,
    delta: f64,
    min_width: f64,
}

impl Prepared<'_> {
    fn new(cond: &Condition, delta: f64, min_width: f64) -> Prepared<'_> {
        let mut outs: Vec<Expr> = cond.premises.iter().map(|p| p.expr.clone()).collect();
        outs.push(cond.gap());
        outs.extend(cond.gap_bounds.iter().cloned());
        let k = cond.arity();
        let mut smooth = Vec::with_capacity(outs.len());
        let mut rows = Vec::with_capacity(outs.len() * k);
        for e in &outs {
            match e.gradient() {
                Ok(g) => {
                    smooth.push(true);
                    rows.extend(g.iter().map(Expr::simplify));
                }
                Err(_) => {
                    smooth.push(false);
                    rows.extend(std::iter::repeat_n(Expr::constant(k, 0.0), k));
                }
            }
        }
        Prepared {
            cond,
            tape: Tape::compile(&outs),
            dtape: Tape::compile(&rows),
            smooth,
            delta,
            min_width,
        }
    }

    fn scratch(&self) -> Scratch {
        let k = self.tape.outputs();
        Scratch {
            islots: Vec::new(),
            iout: vec![None; k],
            pout: vec![None; k],
            dout: vec![None; self.dtape.outputs()],
            slots: Vec::new(),
            out: vec![0.0; k],
        }
    }

    fn prunes(&self, iout: &[Option<Interval>]) -> bool {
        let np = self.cond.premises.len();
        for (p, iv) in self.cond.premises.iter().zip(iout) {
            if let Some(iv) = iv {
                if iv.hi < p.lo || iv.lo > p.hi {
                    return true;
                }
            }
        }
        iout[np..].iter().flatten().any(|g| g.hi < 0.0)
    }

    /// Intersects each natural enclosure with the mean-value form
    /// `F(c) + sum_i F_i(X) (X_i - c_i)` around the midpoint `c`.
    fn refine(&self, bx: &HyperBox, mid: &[f64], s: &mut Scratch) {
        let k = bx.dim();
        let centre: Vec<Interval> = mid.iter().map(|c| Interval::point(*c)).collect();
        let offsets: Vec<Interval> = bx
            .intervals()
            .iter()
            .zip(mid)
            .map(|(iv, c)| iv.sub(Interval::point(*c)))
            .collect();
        self.tape.eval_interval_into(&centre, &mut s.islots, &mut s.pout);
        self.dtape.eval_interval_into(bx.intervals(), &mut s.islots, &mut s.dout);
        for (o, natural) in s.iout.iter_mut().enumerate() {
            if !self.smooth[o] {
                continue;
            }
            let Some(mut acc) = s.pout[o] else { continue };
            let mut ok = true;
            for (i, off) in offsets.iter().enumerate() {
                match s.dout[o * k + i] {
                    Some(d) => acc = acc.add(d.mul(*off)),
                    None => {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok {
                continue;
            }
            *natural = match natural {
                Some(nat) => nat.intersect(&acc).or(Some(acc)),
                None => Some(acc),
            };
        }
    }

    /// Split direction: the side contributing most to the spread of the
    /// outputs, each output normalized to unit total spread. Only sides whose
    /// width relative to the domain is within [`ASPECT`] of the largest one
    /// are eligible.
    fn split_dim(&self, bx: &HyperBox, s: &Scratch) -> usize {
        let k = bx.dim();
        let widths: Vec<f64> = bx.intervals().iter().map(Interval::width).collect();
        let rel: Vec<f64> = widths
            .iter()
            .zip(self.cond.domain.intervals())
            .map(|(w, d)| if d.width() > 0.0 { w / d.width() } else { 0.0 })
            .collect();
        let rmax = rel.iter().cloned().fold(0.0, f64::max);
        let mut score: Vec<f64> = rel.iter().map(|r| 1e-6 * r / rmax).collect();
        for o in 0..self.smooth.len() {
            if !self.smooth[o] {
                continue;
            }
            let row: Option<Vec<f64>> = (0..k).map(|i| s.dout[o * k + i].map(|d| d.mag() * widths[i])).collect();
            let Some(row) = row else { continue };
            let total: f64 = row.iter().sum();
            if total.is_finite() && total > 0.0 {
                for (sc, r) in score.iter_mut().zip(&row) {
                    *sc += r / total;
                }
            }
        }
        let mut best = bx.widest_dim();
        let mut top = f64::NEG_INFINITY;
        for (i, sc) in score.iter().enumerate() {
            if widths[i] > self.min_width && rel[i] * ASPECT >= rmax && *sc > top {
                top = *sc;
                best = i;
            }
        }
        best
    }

    fn process(&self, bx: HyperBox, s: &mut Scratch) -> Outcome {
        let np = self.cond.premises.len();
        self.tape.eval_interval_into(bx.intervals(), &mut s.islots, &mut s.iout);
        if self.prunes(&s.iout) {
            return Outcome::Pruned;
        }
        let mid = bx.midpoint();
        self.refine(&bx, &mid, s);
        if self.prunes(&s.iout) {
            return Outcome::Pruned;
        }
        let floor = bx.max_width() <= self.min_width;
        if self.tape.eval_into(&mid, &mut s.slots, &mut s.out).is_ok() {
            let residuals: Vec<f64> = self
                .cond
                .premises
                .iter()
                .zip(&s.out)
                .map(|(p, v)| p.residual(*v))
                .collect();
            let gap = s.out[np];
            let near = residuals.iter().all(|r| *r <= self.delta);
            let threshold = if floor { -self.delta } else { 0.0 };
            if near && gap >= threshold {
                return Outcome::Witness(mid, residuals, gap);
            }
        }
        if floor {
            return Outcome::Undecided;
        }
        let (a, b) = bx.bisect(self.split_dim(&bx, s));
        Outcome::Split(a, b)
    }
}

/// Search `cond.domain` for a point satisfying every premise and violating
/// the strict conclusion.
///
/// * `Verified`: no such point exists (interval arithmetic is outward rounded).
/// * `Falsified`: a point whose premise residuals are at most `delta` and whose
///   gap `lhs - rhs` is nonnegative, or at least `-delta` on a box at the width
///   floor.
/// * `Unknown`: boxes at the width floor could not be decided, or the box
///   budget ran out.
pub fn refute_forall(cond: &Condition, opts: &VerifyOptions) -> Result<VerificationVerdict> {
    opts.validate()?;
    let prep = Prepared::new(cond, opts.delta, opts.min_width);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;

    let mut stack = vec![cond.domain.clone()];
    let mut processed: u64 = 0;
    let mut undecided: u64 = 0;
    while !stack.is_empty() {
        if processed >= opts.budget {
            return Ok(VerificationVerdict::Unknown {
                reason: format!("{}: budget of {} boxes exhausted", cond.name, opts.budget),
            });
        }
        let take = stack.len().min(BATCH);
        let batch: Vec<HyperBox> = stack.split_off(stack.len() - take);
        processed += take as u64;
        let results: Vec<Outcome> = pool.install(|| {
            batch
                .into_par_iter()
                .map_init(|| prep.scratch(), |s, bx| prep.process(bx, s))
                .collect()
        });
        let mut children = Vec::new();
        for r in results {
            match r {
                Outcome::Pruned => {}
                Outcome::Split(a, b) => {
                    children.push(b);
                    children.push(a);
                }
                Outcome::Witness(w, res, gap) => {
                    return Ok(VerificationVerdict::Falsified {
                        witness: w,
                        premise_residuals: res,
                        conclusion: gap,
                    });
                }
                Outcome::Undecided => undecided += 1,
            }
        }
        stack.extend(children);
    }
    if undecided > 0 {
        return Ok(VerificationVerdict::Unknown {
            reason: format!(
                "{}: {undecided} boxes at width {:e} could not be decided",
                cond.name, opts.min_width
            ),
        });
    }
    Ok(VerificationVerdict::Verified {
        delta: opts.delta,
        boxes_processed: processed,
    })
}
