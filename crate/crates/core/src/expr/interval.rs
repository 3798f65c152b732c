//! Outward-rounded interval arithmetic and axis-aligned boxes.
//!
//! Every elementary operation computes its bounds in round-to-nearest and then
//! widens the result by one ulp on each side (two ulps for library
//! transcendentals, which are only faithful, not correctly rounded). The
//! result therefore encloses the exact real image of the operands.

use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

#[inline]
fn down(x: f64) -> f64 {
    if x.is_finite() {
        x.next_down()
    } else {
        x
    }
}

#[inline]
fn up(x: f64) -> f64 {
    if x.is_finite() {
        x.next_up()
    } else {
        x
    }
}

#[inline]
fn down2(x: f64) -> f64 {
    down(down(x))
}

#[inline]
fn up2(x: f64) -> f64 {
    up(up(x))
}

#[inline]
fn min4(a: f64, b: f64, c: f64, d: f64) -> f64 {
    a.min(b).min(c.min(d))
}

#[inline]
fn max4(a: f64, b: f64, c: f64, d: f64) -> f64 {
    a.max(b).max(c.max(d))
}

/// Product of two bounds where `0 * inf` is taken as 0 (the limit of finite
/// products, which is what interval multiplication needs).
#[inline]
fn mul0(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        0.0
    } else {
        a * b
    }
}

impl Interval {
    pub const ENTIRE: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    /// Panics if `lo > hi` or either bound is NaN.
    pub fn new(lo: f64, hi: f64) -> Self {
        assert!(lo <= hi, "invalid interval [{lo}, {hi}]");
        Interval { lo, hi }
    }

    pub fn point(x: f64) -> Self {
        Interval { lo: x, hi: x }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        if self.lo == f64::NEG_INFINITY || self.hi == f64::INFINITY {
            if self.lo.is_finite() {
                return self.lo;
            }
            if self.hi.is_finite() {
                return self.hi;
            }
            return 0.0;
        }
        let m = 0.5 * self.lo + 0.5 * self.hi;
        m.clamp(self.lo, self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn contains_zero(&self) -> bool {
        self.contains(0.0)
    }

    pub fn intersects(&self, other: &Interval) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }

    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo <= hi).then_some(Interval { lo, hi })
    }

    pub fn hull(&self, other: &Interval) -> Interval {
        Interval {
            lo: self.lo.min(other.lo),
            hi: self.hi.max(other.hi),
        }
    }

    pub fn mag(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }

    pub fn neg(self) -> Interval {
        Interval {
            lo: -self.hi,
            hi: -self.lo,
        }
    }

    pub fn add(self, o: Interval) -> Interval {
        let lo = down(self.lo + o.lo);
        Interval {
            lo: if self.lo >= 0.0 && o.lo >= 0.0 { lo.max(0.0) } else { lo },
            hi: up(self.hi + o.hi),
        }
    }

    pub fn sub(self, o: Interval) -> Interval {
        Interval {
            lo: down(self.lo - o.hi),
            hi: up(self.hi - o.lo),
        }
    }

    pub fn mul(self, o: Interval) -> Interval {
        let (a, b, c, d) = (
            mul0(self.lo, o.lo),
            mul0(self.lo, o.hi),
            mul0(self.hi, o.lo),
            mul0(self.hi, o.hi),
        );
        Interval {
            lo: down(min4(a, b, c, d)),
            hi: up(max4(a, b, c, d)),
        }
    }

    pub fn scale(self, c: f64) -> Interval {
        self.mul(Interval::point(c))
    }

    /// `None` when the divisor contains zero.
    pub fn div(self, o: Interval) -> Option<Interval> {
        if o.contains_zero() {
            return None;
        }
        let (a, b, c, d) = (self.lo / o.lo, self.lo / o.hi, self.hi / o.lo, self.hi / o.hi);
        Some(Interval {
            lo: down(min4(a, b, c, d)),
            hi: up(max4(a, b, c, d)),
        })
    }

    pub fn square(self) -> Interval {
        let (a, b) = (self.lo * self.lo, self.hi * self.hi);
        if self.contains_zero() {
            Interval {
                lo: 0.0,
                hi: up(a.max(b)),
            }
        } else {
            Interval {
                lo: down(a.min(b)).max(0.0),
                hi: up(a.max(b)),
            }
        }
    }

    /// Integer power. `None` for negative exponents over an interval holding zero.
    pub fn powi(self, k: i32) -> Option<Interval> {
        match k {
            0 => Some(Interval::point(1.0)),
            1 => Some(self),
            2 => Some(self.square()),
            k if k < 0 => Interval::point(1.0).div(self.powi(-k)?),
            k => {
                // powi rounds once per multiplication: widen one ulp per factor
                let steps = k as u32;
                let p = |x: f64| (0..steps).fold(x.powi(k), |v, _| up(v));
                let q = |x: f64| (0..steps).fold(x.powi(k), |v, _| down(v));
                if k % 2 == 1 {
                    Some(Interval {
                        lo: q(self.lo),
                        hi: p(self.hi),
                    })
                } else if self.contains_zero() {
                    Some(Interval {
                        lo: 0.0,
                        hi: p(self.mag()),
                    })
                } else {
                    let (a, b) = (self.lo.abs(), self.hi.abs());
                    Some(Interval {
                        lo: q(a.min(b)).max(0.0),
                        hi: p(a.max(b)),
                    })
                }
            }
        }
    }

    /// `None` when the interval reaches below zero.
    pub fn sqrt(self) -> Option<Interval> {
        if self.lo < 0.0 {
            return None;
        }
        Some(Interval {
            lo: down(self.lo.sqrt()).max(0.0),
            hi: up(self.hi.sqrt()),
        })
    }

    pub fn exp(self) -> Interval {
        Interval {
            lo: down2(self.lo.exp()).max(0.0),
            hi: up2(self.hi.exp()),
        }
    }

    /// `None` when the interval reaches zero or below.
    pub fn ln(self) -> Option<Interval> {
        if self.lo <= 0.0 {
            return None;
        }
        Some(Interval {
            lo: down2(self.lo.ln()),
            hi: up2(self.hi.ln()),
        })
    }

    pub fn abs(self) -> Interval {
        if self.lo >= 0.0 {
            self
        } else if self.hi <= 0.0 {
            self.neg()
        } else {
            Interval {
                lo: 0.0,
                hi: self.mag(),
            }
        }
    }

    pub fn min(self, o: Interval) -> Interval {
        Interval {
            lo: self.lo.min(o.lo),
            hi: self.hi.min(o.hi),
        }
    }

    pub fn max(self, o: Interval) -> Interval {
        Interval {
            lo: self.lo.max(o.lo),
            hi: self.hi.max(o.hi),
        }
    }

    pub fn sin(self) -> Interval {
        // sin(x) = cos(x - pi/2)
        periodic_cos(self, std::f64::consts::FRAC_PI_2)
    }

    pub fn cos(self) -> Interval {
        periodic_cos(self, 0.0)
    }
}

/// Enclosure of `cos(x - shift)` over `x`.
fn periodic_cos(x: Interval, shift: f64) -> Interval {
    use std::f64::consts::PI;
    const FULL: Interval = Interval { lo: -1.0, hi: 1.0 };
    if !x.lo.is_finite() || !x.hi.is_finite() || x.width() >= 2.0 * PI {
        return FULL;
    }
    // endpoint values, evaluated on the original variable
    let f = |v: f64| if shift == 0.0 { v.cos() } else { v.sin() };
    let (a, b) = (f(x.lo), f(x.hi));
    let mut lo = down2(a.min(b)).max(-1.0);
    let mut hi = up2(a.max(b)).min(1.0);
    // maxima of cos(t) at t = 2k*pi, minima at t = (2k+1)*pi with t = x - shift.
    // Critical points are located with a tolerance so that rounding in the
    // shifted bounds can only add extrema, never drop them.
    let slack = 1e-9;
    let t_lo = (x.lo - shift) / PI - slack;
    let t_hi = (x.hi - shift) / PI + slack;
    let first = t_lo.ceil() as i64;
    let last = t_hi.floor() as i64;
    if first <= last {
        for k in first..=last.min(first + 2) {
            if k.rem_euclid(2) == 0 {
                hi = 1.0;
            } else {
                lo = -1.0;
            }
        }
    }
    Interval { lo, hi }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

impl From<[f64; 2]> for Interval {
    fn from(v: [f64; 2]) -> Self {
        Interval::new(v[0], v[1])
    }
}

/// Axis-aligned box, one interval per coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperBox {
    dims: Vec<Interval>,
}

impl HyperBox {
    /// Panics on an empty dimension list.
    pub fn new(dims: Vec<Interval>) -> Self {
        assert!(!dims.is_empty(), "a box needs at least one dimension");
        HyperBox { dims }
    }

    pub fn from_bounds(bounds: &[(f64, f64)]) -> Self {
        HyperBox::new(bounds.iter().map(|&(a, b)| Interval::new(a, b)).collect())
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.dims
    }

    pub fn get(&self, i: usize) -> Interval {
        self.dims[i]
    }

    pub fn set(&mut self, i: usize, iv: Interval) {
        self.dims[i] = iv;
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.dims.iter().map(Interval::mid).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dims.len() && self.dims.iter().zip(x).all(|(iv, &v)| iv.contains(v))
    }

    /// Strictly inside, used for the origin-in-interior requirement.
    pub fn contains_interior(&self, x: &[f64]) -> bool {
        x.len() == self.dims.len()
            && self
                .dims
                .iter()
                .zip(x)
                .all(|(iv, &v)| iv.lo < v && v < iv.hi)
    }

    pub fn max_width(&self) -> f64 {
        self.dims.iter().map(Interval::width).fold(0.0, f64::max)
    }

    /// Widest dimension, lowest index on ties.
    pub fn widest_dim(&self) -> usize {
        let mut best = 0;
        let mut w = self.dims[0].width();
        for (i, iv) in self.dims.iter().enumerate().skip(1) {
            if iv.width() > w {
                w = iv.width();
                best = i;
            }
        }
        best
    }

    pub fn bisect(&self, dim: usize) -> (HyperBox, HyperBox) {
        let iv = self.dims[dim];
        let m = iv.mid();
        let mut left = self.clone();
        let mut right = self.clone();
        left.dims[dim] = Interval { lo: iv.lo, hi: m };
        right.dims[dim] = Interval { lo: m, hi: iv.hi };
        (left, right)
    }

    /// Concatenate with another box (state box followed by auxiliaries).
    pub fn product(&self, other: &HyperBox) -> HyperBox {
        let mut dims = self.dims.clone();
        dims.extend_from_slice(&other.dims);
        HyperBox { dims }
    }

    pub fn volume(&self) -> f64 {
        self.dims.iter().map(Interval::width).product()
    }
}

impl fmt::Display for HyperBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        write!(f, "{}", parts.join(" x "))
    }
}
