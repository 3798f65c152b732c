use nalgebra::{DMatrix, DVector};

use crate::system::InputBounds;

const POINTS: usize = 21;
const ROUNDS: usize = 48;

fn project(u: &mut [f64], bounds: &InputBounds) {
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

fn slack(a: &DMatrix<f64>, b: &DVector<f64>, u: &[f64]) -> f64 {
    (0..a.nrows())
        .map(|i| b[i] - (0..a.ncols()).map(|j| a[(i, j)] * u[j]).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

/// Subsets of `0..n` with between 1 and `max` elements, as bitmasks.
fn subsets(n: usize, max: usize) -> impl Iterator<Item = u64> {
    (1u64..1 << n).filter(move |s| (s.count_ones() as usize) <= max)
}

fn members(s: u64) -> Vec<usize> {
    (0..64).filter(|i| s >> i & 1 == 1).collect()
}

/// Best slack over the active-set points: vertices of the polytope
/// `{(u, t): A u + t <= b, u in box}` for a box, and for a ball the points
/// where a set `S` of rows tie and either `|S| = m + 1` or the tied value is
/// maximized over the ball.
fn active_set_slack(a: &DMatrix<f64>, b: &DVector<f64>, bounds: &InputBounds) -> f64 {
    const MAX_ROWS: usize = 16;
    let (n, m) = a.shape();
    let mut best = f64::NEG_INFINITY;
    let mut consider = |u: &mut Vec<f64>| {
        project(u, bounds);
        best = best.max(slack(a, b, u));
    };
    match bounds {
        InputBounds::Box { lower, upper } => {
            // rows of [A 1; I 0; -I 0] (u, t) <= [b; upper; -lower]
            let rows = n + 2 * m;
            if rows > MAX_ROWS {
                return best;
            }
            for s in subsets(rows, m + 1).filter(|s| s.count_ones() as usize == m + 1) {
                let idx = members(s);
                let mut lhs = DMatrix::zeros(m + 1, m + 1);
                let mut rhs = DVector::zeros(m + 1);
                for (r, &i) in idx.iter().enumerate() {
                    if i < n {
                        (0..m).for_each(|j| lhs[(r, j)] = a[(i, j)]);
                        lhs[(r, m)] = 1.0;
                        rhs[r] = b[i];
                    } else if i < n + m {
                        lhs[(r, i - n)] = 1.0;
                        rhs[r] = upper[i - n];
                    } else {
                        lhs[(r, i - n - m)] = -1.0;
                        rhs[r] = -lower[i - n - m];
                    }
                }
                if let Some(z) = lhs.lu().solve(&rhs) {
                    let mut u: Vec<f64> = z.iter().take(m).copied().collect();
                    if u.iter().all(|v| v.is_finite()) {
                        consider(&mut u);
                    }
                }
            }
        }
        InputBounds::Ball { .. } if n > MAX_ROWS => {}
        InputBounds::Ball { radius } => {
            for s in subsets(n, m + 1) {
                let idx = members(s);
                let k = idx[0];
                // ties (a_i - a_k) u = b_i - b_k
                let e = DMatrix::from_fn(idx.len() - 1, m, |r, j| a[(idx[r + 1], j)] - a[(k, j)]);
                let rhs = DVector::from_fn(idx.len() - 1, |r, _| b[idx[r + 1]] - b[k]);
                let (u0, proj) = if idx.len() == 1 {
                    (DVector::zeros(m), DMatrix::identity(m, m))
                } else {
                    let Ok(pinv) = e.clone().pseudo_inverse(1e-12) else { continue };
                    let u0 = &pinv * &rhs;
                    if (&e * &u0 - &rhs).norm() > 1e-9 * (1.0 + rhs.norm()) {
                        continue;
                    }
                    (u0, DMatrix::identity(m, m) - &pinv * &e)
                };
                let r0 = u0.norm();
                if r0 > *radius * (1.0 + 1e-12) {
                    continue;
                }
                let ak = DVector::from_fn(m, |j, _| a[(k, j)]);
                let d = &proj * ak;
                let dn = d.norm();
                let u = if dn > 1e-14 {
                    let rho = (radius * radius - r0 * r0).max(0.0).sqrt();
                    u0 - d * (rho / dn)
                } else {
                    u0
                };
                consider(&mut u.iter().copied().collect());
            }
        }
    }
    best
}

/// `max_{u in U} min_i (b_i - (A u)_i)`: the larger of the best active-set
/// point and a dense grid over the input set refined around the incumbent.
/// Every candidate is a feasible input, so the result never overshoots.
pub fn farkas_primal_slack(a: &DMatrix<f64>, b: &DVector<f64>, bounds: &InputBounds) -> f64 {
    let m = a.ncols();
    assert_eq!(a.nrows(), b.len(), "A and b disagree");
    let (mut center, mut half): (Vec<f64>, Vec<f64>) = match bounds {
        InputBounds::Ball { radius } => (vec![0.0; m], vec![*radius; m]),
        InputBounds::Box { .. } => ((0..m).map(|j| bounds.mid(j)).collect(), (0..m).map(|j| bounds.half_width(j)).collect()),
    };
    let mut best = f64::NEG_INFINITY;
    let mut u = vec![0.0; m];
    let total = POINTS.pow(m as u32);
    for _ in 0..ROUNDS {
        let mut best_u = center.clone();
        for idx in 0..total {
            let mut k = idx;
            for j in 0..m {
                let t = (k % POINTS) as f64 / (POINTS - 1) as f64;
                k /= POINTS;
                u[j] = center[j] + half[j] * (2.0 * t - 1.0);
            }
            project(&mut u, bounds);
            let s = slack(a, b, &u);
            if s > best {
                best = s;
                best_u.copy_from_slice(&u);
            }
        }
        center = best_u;
        half.iter_mut().for_each(|h| *h *= 0.5);
    }
    best.max(active_set_slack(a, b, bounds))
}

/// Whether `A u < b` has a solution in the input set.
pub fn farkas_feasible_oracle(a: &DMatrix<f64>, b: &DVector<f64>, bounds: &InputBounds) -> bool {
    farkas_primal_slack(a, b, bounds) > 0.0
}
