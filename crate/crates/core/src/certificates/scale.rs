use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::tape::Tape;
use crate::expr::{Expr, HyperBox, Interval};

#[derive(Clone, Copy, Debug)]
pub struct ScaleOptions {
    /// Stop once `upper - lower <= gap`.
    pub gap: f64,
    pub max_boxes: usize,
    /// When set, the bound is coarsened to the upper end of the bracket left
    /// by bisecting the level range `[0, 2^k]` (the smallest such range
    /// holding the bound) down to a width of at most `resolution`.
    pub resolution: Option<f64>,
}

impl Default for ScaleOptions {
    fn default() -> Self {
        ScaleOptions {
            gap: 1e-4,
            max_boxes: 10_000_000,
            resolution: None,
        }
    }
}

/// Certified enclosure of `max V` over `{h <= 1}` within a box, plus the
/// resulting scaling factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleBound {
    pub eps: f64,
    pub alpha: f64,
    /// Certified upper bound on the maximum.
    pub upper: f64,
    /// Value attained at `argmax`, a feasible point.
    pub lower: f64,
    pub argmax: Vec<f64>,
    pub boxes: usize,
}

struct Item {
    ub: f64,
    seq: usize,
    bx: HyperBox,
}

impl PartialEq for Item {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Item {}
impl PartialOrd for Item {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Item {
    fn cmp(&self, o: &Self) -> Ordering {
        // max-heap on ub, earlier boxes first on ties
        self.ub.total_cmp(&o.ub).then(o.seq.cmp(&self.seq))
    }
}

/// `alpha = (1 - eps) / M_up` where `M_up` bounds `max {V(x) : h(x) <= 1, x in
/// domain}` from above. Best-first interval branch and bound.
pub fn scale_clf(v: &Expr, h: &Expr, eps: f64, domain: &HyperBox, opts: ScaleOptions) -> Result<ScaleBound> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidArgument(format!("eps must lie in (0, 1), got {eps}")));
    }
    if v.arity() != domain.dim() || h.arity() != domain.dim() {
        return Err(Error::InvalidArgument("scale_clf: arity mismatch".into()));
    }
    let tape = Tape::compile(&[v.clone(), h.clone()]);
    let mut islots = Vec::new();
    let mut iout = [None; 2];
    let mut slots = Vec::new();
    let mut out = [0.0; 2];

    let mut lower = f64::NEG_INFINITY;
    let mut argmax: Vec<f64> = Vec::new();
    let mut heap = BinaryHeap::new();
    let mut seq = 0usize;
    let mut boxes = 0usize;

    let mut consider = |bx: HyperBox,
                        heap: &mut BinaryHeap<Item>,
                        lower: &mut f64,
                        argmax: &mut Vec<f64>,
                        seq: &mut usize| {
        tape.eval_interval_into(bx.intervals(), &mut islots, &mut iout);
        let vb = iout[0].unwrap_or(Interval::ENTIRE);
        if let Some(hb) = iout[1] {
            if hb.lo > 1.0 {
                return;
            }
        }
        let mid = bx.midpoint();
        if tape.eval_into(&mid, &mut slots, &mut out).is_ok() && out[1] <= 1.0 && out[0] > *lower {
            *lower = out[0];
            *argmax = mid;
        }
        if vb.hi < *lower {
            return;
        }
        *seq += 1;
        heap.push(Item {
            ub: vb.hi,
            seq: *seq,
            bx,
        });
    };

    consider(domain.clone(), &mut heap, &mut lower, &mut argmax, &mut seq);
    loop {
        let top = match heap.pop() {
            Some(t) => t,
            None => break,
        };
        if top.ub - lower <= opts.gap || top.bx.max_width() < 1e-12 {
            if top.ub - lower > opts.gap {
                return Err(Error::Budget(format!(
                    "scale_clf: box width floor reached with gap {:e}",
                    top.ub - lower
                )));
            }
            boxes += heap.len();
            let upper = match opts.resolution {
                Some(r) => level_bracket(top.ub, r)?,
                None => top.ub,
            };
            return Ok(ScaleBound {
                eps,
                alpha: (1.0 - eps) / upper,
                upper,
                lower,
                argmax,
                boxes,
            });
        }
        boxes += 1;
        if boxes > opts.max_boxes {
            return Err(Error::Budget(format!("scale_clf: more than {} boxes", opts.max_boxes)));
        }
        let (a, b) = top.bx.bisect(top.bx.widest_dim());
        consider(a, &mut heap, &mut lower, &mut argmax, &mut seq);
        consider(b, &mut heap, &mut lower, &mut argmax, &mut seq);
    }
    if lower.is_finite() {
        // every remaining box was dominated by a feasible point
        return Ok(ScaleBound {
            eps,
            alpha: (1.0 - eps) / lower,
            upper: lower,
            lower,
            argmax,
            boxes,
        });
    }
    Err(Error::InvalidArgument("scale_clf: {h <= 1} has no feasible sample in the domain".into()))
}

/// Upper end of the level bisection bracket holding `upper`.
fn level_bracket(upper: f64, resolution: f64) -> Result<f64> {
    if !(resolution > 0.0) || !(upper > 0.0) || !upper.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "level bisection needs a positive resolution and bound, got {resolution:e} and {upper:e}"
        )));
    }
    let mut hi = 2f64.powi(upper.log2().ceil() as i32);
    if hi < upper {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    while hi - lo > resolution {
        let mid = 0.5 * (lo + hi);
        if upper <= mid {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

impl ScaleBound {
    /// Same certified maximum, different band width.
    pub fn with_eps(&self, eps: f64) -> Result<ScaleBound> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::InvalidArgument(format!("eps must lie in (0, 1), got {eps}")));
        }
        Ok(ScaleBound {
            eps,
            alpha: (1.0 - eps) / self.upper,
            ..self.clone()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_v() {
        let v = Expr::constant(2, 4.0);
        let h = Expr::constant(2, 0.0);
        let bx = HyperBox::from_bounds(&[(-1.0, 1.0), (-1.0, 1.0)]);
        let s = scale_clf(&v, &h, 0.5, &bx, ScaleOptions::default()).unwrap();
        assert_eq!(s.alpha, 0.5 / 4.0);
    }

    #[test]
    fn disk_maximum() {
        // max of x1^2 + 2 x2^2 over the unit disk is 2
        let x = Expr::vars(2);
        let v = x[0].square() + 2.0 * x[1].square();
        let h = x[0].square() + x[1].square();
        let bx = HyperBox::from_bounds(&[(-2.0, 2.0), (-2.0, 2.0)]);
        let s = scale_clf(&v, &h, 0.25, &bx, ScaleOptions::default()).unwrap();
        assert!(s.upper >= 2.0 && s.upper - 2.0 <= 1e-4);
        assert!(s.lower <= 2.0);
        assert!((s.alpha - 0.75 / s.upper).abs() < 1e-18);
    }

    #[test]
    fn level_bracket_is_dyadic_and_above() {
        let u = 39.0170939477;
        let b = level_bracket(u, 1e-4).unwrap();
        assert_eq!(b, 39.0 + 281.0 / 16384.0);
        assert!(b >= u && b - u <= 1e-4);
        assert_eq!(level_bracket(4.0, 0.5).unwrap(), 4.0);
        assert!(level_bracket(-1.0, 0.5).is_err());
    }

    #[test]
    fn rejects_bad_eps() {
        let v = Expr::constant(1, 1.0);
        let bx = HyperBox::from_bounds(&[(-1.0, 1.0)]);
        assert!(scale_clf(&v, &v, 1.0, &bx, ScaleOptions::default()).is_err());
    }
}
