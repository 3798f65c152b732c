//! Fixed-step RK4 closed-loop simulation, sampling of start points and batch
//! summaries.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Expr, HyperBox};
use crate::system::ControlAffineSystem;

/// Start points are drawn from `{h <= 1 - SAMPLE_MARGIN}`.
pub const SAMPLE_MARGIN: f64 = 1e-3;
const MIN_ACCEPTANCE: f64 = 1e-4;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    pub h: Vec<f64>,
    pub w: Vec<f64>,
    /// Set when the run stopped because the state left the domain.
    pub left_domain: bool,
    /// Extremes over every integration step, recorded or not.
    pub peaks: Peaks,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Peaks {
    /// Visited grid points, including the start.
    pub steps: usize,
    pub max_h: f64,
    pub max_u_norm: f64,
    pub u_min: Vec<f64>,
    pub u_max: Vec<f64>,
}

impl Peaks {
    fn new(m: usize) -> Self {
        Peaks {
            steps: 0,
            max_h: f64::NEG_INFINITY,
            max_u_norm: 0.0,
            u_min: vec![f64::INFINITY; m],
            u_max: vec![f64::NEG_INFINITY; m],
        }
    }

    fn visit(&mut self, u: &[f64], h: f64) {
        self.steps += 1;
        self.max_h = self.max_h.max(h);
        self.max_u_norm = self.max_u_norm.max(u.iter().map(|v| v * v).sum::<f64>().sqrt());
        for (j, v) in u.iter().enumerate() {
            self.u_min[j] = self.u_min[j].min(*v);
            self.u_max[j] = self.u_max[j].max(*v);
        }
    }
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// CSV with header `t,x1..xn,u1..um,h,W`, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let n = self.states.first().map_or(0, Vec::len);
        let m = self.inputs.first().map_or(0, Vec::len);
        let mut s = String::from("t");
        (1..=n).for_each(|i| {
            let _ = write!(s, ",x{i}");
        });
        (1..=m).for_each(|j| {
            let _ = write!(s, ",u{j}");
        });
        s.push_str(",h,W\n");
        for k in 0..self.len() {
            let _ = write!(s, "{:.16e}", self.times[k]);
            for v in self.states[k].iter().chain(&self.inputs[k]) {
                let _ = write!(s, ",{v:.16e}");
            }
            let _ = writeln!(s, ",{:.16e},{:.16e}", self.h[k], self.w[k]);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

fn axpy(x: &[f64], a: f64, k: &[f64]) -> Vec<f64> {
    x.iter().zip(k).map(|(xi, ki)| xi + a * ki).collect()
}

/// Integrate `x' = f(x) + g(x) kappa(x)` with classical RK4, the feedback
/// evaluated at every stage. `monitor` returns `(h(x), W(x))` for logging.
/// The run stops early, with `left_domain` set, once a step lands outside the
/// domain box.
pub fn simulate<K, M>(sys: &ControlAffineSystem, kappa: K, monitor: M, x0: &[f64], t_end: f64, dt: f64) -> Result<Trajectory>
where
    K: Fn(&[f64]) -> Result<Vec<f64>>,
    M: Fn(&[f64]) -> Result<(f64, f64)>,
{
    simulate_strided(sys, kappa, monitor, x0, t_end, dt, 1)
}

/// [`simulate`] keeping every `stride`-th grid point and the last one.
/// [`Trajectory::peaks`] still covers every step.
pub fn simulate_strided<K, M>(
    sys: &ControlAffineSystem,
    kappa: K,
    monitor: M,
    x0: &[f64],
    t_end: f64,
    dt: f64,
    stride: usize,
) -> Result<Trajectory>
where
    K: Fn(&[f64]) -> Result<Vec<f64>>,
    M: Fn(&[f64]) -> Result<(f64, f64)>,
{
    if stride == 0 {
        return Err(Error::InvalidArgument("record stride must be positive".into()));
    }
    if !(dt > 0.0 && dt.is_finite()) || !(t_end >= 0.0) {
        return Err(Error::InvalidArgument(format!("bad horizon {t_end} or step {dt}")));
    }
    if x0.len() != sys.n() || !sys.domain().contains(x0) {
        return Err(Error::InvalidArgument(format!("start {x0:?} is not in the domain")));
    }
    let steps = (t_end / dt).round() as usize;
    let wrap = |t: f64| move |e: Error| Error::Simulation { t, source: Box::new(e) };
    let rhs = |x: &[f64], t: f64| -> Result<Vec<f64>> {
        let u = kappa(x).map_err(wrap(t))?;
        sys.field(x, &u).map_err(wrap(t))
    };
    let mut traj = Trajectory {
        peaks: Peaks::new(sys.m()),
        ..Trajectory::default()
    };
    let mut x = x0.to_vec();
    let record = |traj: &mut Trajectory, t: f64, x: &[f64], u: &[f64], h: f64, w: f64| {
        traj.times.push(t);
        traj.states.push(x.to_vec());
        traj.inputs.push(u.to_vec());
        traj.h.push(h);
        traj.w.push(w);
    };
    for k in 0..=steps {
        let t = k as f64 * dt;
        let u = kappa(&x).map_err(wrap(t))?;
        let (h, w) = monitor(&x).map_err(wrap(t))?;
        traj.peaks.visit(&u, h);
        if k % stride == 0 || k == steps {
            record(&mut traj, t, &x, &u, h, w);
        }
        if k == steps {
            break;
        }
        let x_prev = x.clone();
        let k1 = sys.field(&x, &u).map_err(wrap(t))?;
        let k2 = rhs(&axpy(&x, 0.5 * dt, &k1), t + 0.5 * dt)?;
        let k3 = rhs(&axpy(&x, 0.5 * dt, &k2), t + 0.5 * dt)?;
        let k4 = rhs(&axpy(&x, dt, &k3), t + dt)?;
        for i in 0..x.len() {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if !sys.domain().contains(&x) {
            // keep the last in-domain point when it was skipped
            if k % stride != 0 {
                let (h, w) = monitor(&x_prev).map_err(wrap(t))?;
                record(&mut traj, t, &x_prev, &u, h, w);
            }
            traj.left_domain = true;
            break;
        }
    }
    Ok(traj)
}

/// Uniform samples of the domain restricted to `{h <= 1 - SAMPLE_MARGIN}`.
pub fn sample_in_c(h: &Expr, domain: &HyperBox, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(count);
    if count == 0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tries = 0u64;
    while out.len() < count {
        let x: Vec<f64> = domain.intervals().iter().map(|iv| rng.random_range(iv.lo..=iv.hi)).collect();
        tries += 1;
        if h.eval(&x).is_ok_and(|v| v <= 1.0 - SAMPLE_MARGIN) {
            out.push(x);
        }
        if tries >= 100_000 && (out.len() as f64) < MIN_ACCEPTANCE * tries as f64 {
            return Err(Error::InvalidArgument(format!(
                "acceptance rate {} / {tries} is below {MIN_ACCEPTANCE}",
                out.len()
            )));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub index: usize,
    pub start: Vec<f64>,
    pub steps: usize,
    /// NaN (written as `null`) for a run that failed.
    #[serde(deserialize_with = "nan_if_null")]
    pub max_h: f64,
    #[serde(deserialize_with = "nan_if_null")]
    pub max_u_norm: f64,
    pub u_min: Vec<f64>,
    pub u_max: Vec<f64>,
    #[serde(deserialize_with = "nan_if_null")]
    pub final_norm: f64,
    pub left_domain: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub t_end: f64,
    pub dt: f64,
    pub runs: Vec<RunSummary>,
    pub worst_max_h: f64,
    pub worst_u_norm: f64,
    pub worst_u_min: Vec<f64>,
    pub worst_u_max: Vec<f64>,
    pub worst_final_norm: f64,
    pub failures: usize,
}

fn nan_if_null<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

fn summarize(index: usize, start: &[f64], res: &Result<Trajectory>) -> RunSummary {
    let mut s = RunSummary {
        index,
        start: start.to_vec(),
        steps: 0,
        max_h: f64::NAN,
        max_u_norm: f64::NAN,
        u_min: Vec::new(),
        u_max: Vec::new(),
        final_norm: f64::NAN,
        left_domain: false,
        error: None,
    };
    match res {
        Err(e) => s.error = Some(e.to_string()),
        Ok(t) => {
            s.steps = t.peaks.steps;
            s.left_domain = t.left_domain;
            s.max_h = t.peaks.max_h;
            s.max_u_norm = t.peaks.max_u_norm;
            s.u_min = t.peaks.u_min.clone();
            s.u_max = t.peaks.u_max.clone();
            if let Some(x) = t.states.last() {
                s.final_norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            }
        }
    }
    s
}

/// Run every start on a pool of `workers` threads. Failed runs are recorded
/// in the report, never abort the batch. Trajectories come back in start
/// order.
#[allow(clippy::too_many_arguments)]
pub fn batch_report<K, M>(
    sys: &ControlAffineSystem,
    kappa: K,
    monitor: M,
    starts: &[Vec<f64>],
    t_end: f64,
    dt: f64,
    stride: usize,
    workers: usize,
) -> Result<(BatchReport, Vec<Result<Trajectory>>)>
where
    K: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
    M: Fn(&[f64]) -> Result<(f64, f64)> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let trajs: Vec<Result<Trajectory>> = pool.install(|| {
        starts
            .par_iter()
            .map(|x0| simulate_strided(sys, &kappa, &monitor, x0, t_end, dt, stride))
            .collect()
    });
    let m = sys.m();
    let runs: Vec<RunSummary> = trajs.iter().enumerate().map(|(i, r)| summarize(i, &starts[i], r)).collect();
    let ok: Vec<&RunSummary> = runs.iter().filter(|r| r.error.is_none()).collect();
    let fold = |f: &dyn Fn(&RunSummary) -> f64| ok.iter().map(|r| f(r)).fold(0.0, f64::max);
    let report = BatchReport {
        t_end,
        dt,
        worst_max_h: ok.iter().map(|r| r.max_h).fold(if ok.is_empty() { 0.0 } else { f64::NEG_INFINITY }, f64::max),
        worst_u_norm: fold(&|r| r.max_u_norm),
        worst_u_min: (0..m).map(|j| ok.iter().map(|r| r.u_min[j]).fold(0.0, f64::min)).collect(),
        worst_u_max: (0..m).map(|j| ok.iter().map(|r| r.u_max[j]).fold(0.0, f64::max)).collect(),
        worst_final_norm: fold(&|r| r.final_norm),
        failures: runs.len() - ok.len(),
        runs,
    };
    Ok((report, trajs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay() -> ControlAffineSystem {
        let x = Expr::var(1, 0);
        ControlAffineSystem::new(
            vec![-x],
            vec![vec![Expr::constant(1, 1.0)]],
            HyperBox::from_bounds(&[(-2.0, 2.0)]),
        )
        .unwrap()
    }

    fn zero(_: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![0.0])
    }

    fn mon(x: &[f64]) -> Result<(f64, f64)> {
        Ok((x[0] * x[0], x[0] * x[0]))
    }

    #[test]
    fn exponential_decay() {
        let t = simulate(&decay(), zero, mon, &[1.0], 1.0, 1e-3).unwrap();
        assert_eq!(t.len(), 1001);
        let x1 = t.states.last().unwrap()[0];
        assert!((x1 - (-1f64).exp()).abs() < 1e-8);
        assert!(t.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn equilibrium_stays_put() {
        let t = simulate(&decay(), zero, mon, &[0.0], 0.5, 1e-2).unwrap();
        assert!(t.states.iter().all(|x| x[0] == 0.0));
    }

    #[test]
    fn leaving_domain_stops() {
        let push = |_: &[f64]| Ok(vec![5.0]);
        let t = simulate(&decay(), push, mon, &[1.5], 10.0, 1e-2).unwrap();
        assert!(t.left_domain);
        assert!(t.len() < 1001);
    }

    #[test]
    fn controller_error_carries_time() {
        let bad = |x: &[f64]| {
            if x[0] < 0.5 {
                Err(Error::Infeasible {
                    point: x.to_vec(),
                    detail: "test".into(),
                })
            } else {
                Ok(vec![0.0])
            }
        };
        match simulate(&decay(), bad, mon, &[1.0], 2.0, 1e-2) {
            Err(Error::Simulation { t, .. }) => assert!((t - 0.69).abs() < 0.02),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_layout() {
        let t = simulate(&decay(), zero, mon, &[1.0], 0.002, 1e-3).unwrap();
        let csv = t.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,x1,u1,h,W");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("0.0000000000000000e0,1.0000000000000000e0,"));
        assert!(!csv.contains('\r'));
    }

    #[test]
    fn sampling() {
        let x = Expr::vars(2);
        let dom = HyperBox::from_bounds(&[(-1.0, 1.0), (-1.0, 1.0)]);
        assert!(sample_in_c(&x[0], &dom, 0, 3).unwrap().is_empty());
        let zero = Expr::constant(2, 0.0);
        let s = sample_in_c(&zero, &dom, 20, 3).unwrap();
        assert_eq!(s.len(), 20);
        assert_eq!(s, sample_in_c(&zero, &dom, 20, 3).unwrap());
        let disk = x[0].square() + x[1].square() + 0.5;
        for p in sample_in_c(&disk, &dom, 50, 9).unwrap() {
            assert!(disk.eval(&p).unwrap() <= 1.0 - SAMPLE_MARGIN);
        }
        let empty = Expr::constant(2, 2.0);
        assert!(sample_in_c(&empty, &dom, 1, 0).is_err());
    }

    #[test]
    fn batch_of_zeros() {
        let starts = vec![vec![0.0]; 4];
        let (r, trajs) = batch_report(&decay(), zero, mon, &starts, 0.1, 1e-2, 1, 2).unwrap();
        assert_eq!(trajs.len(), 4);
        assert_eq!(r.worst_max_h, 0.0);
        assert_eq!(r.worst_u_norm, 0.0);
        assert_eq!(r.worst_final_norm, 0.0);
        assert_eq!(r.failures, 0);
    }

    #[test]
    fn stride_keeps_peaks_and_endpoints() {
        let sys = decay();
        let k = |x: &[f64]| Ok(vec![0.3 * x[0]]);
        let full = simulate(&sys, k, mon, &[1.0], 0.1, 1e-3).unwrap();
        let thin = simulate_strided(&sys, k, mon, &[1.0], 0.1, 1e-3, 7).unwrap();
        assert_eq!(full.peaks, thin.peaks);
        assert_eq!(full.peaks.steps, full.len());
        assert_eq!(thin.len(), 100 / 7 + 2);
        assert_eq!(thin.states.last(), full.states.last());
        assert_eq!(thin.times[1], full.times[7]);
        assert!(simulate_strided(&sys, k, mon, &[1.0], 0.1, 1e-3, 0).is_err());
    }

    #[test]
    fn failed_runs_survive_json() {
        let starts = vec![vec![0.5], vec![0.0]];
        let fail = |x: &[f64]| {
            if x[0] != 0.0 {
                Err(Error::InvalidArgument("no".into()))
            } else {
                Ok(vec![0.0])
            }
        };
        let (r, _) = batch_report(&decay(), fail, mon, &starts, 0.1, 1e-2, 1, 1).unwrap();
        assert_eq!(r.failures, 1);
        let back: BatchReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert!(back.runs[0].max_h.is_nan() && back.runs[0].error.is_some());
        assert_eq!(back.runs[1], r.runs[1]);
        assert_eq!(back.worst_max_h, r.worst_max_h);
    }
}
