//! Browser demo: rebuilds a certificate from a config and its verified
//! manifest, then exposes the patched function, closed-loop trajectories and
//! the bump switch to JavaScript.

use clbf::certificates::{bump, PatchedW};
use clbf::cli::{certificate_from_manifest, Problem, ProjectConfig, RunManifest};
use clbf::controllers::{blended_law, FeedbackLaw};
use clbf::simulator::simulate_strided;
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Demo {
    problem: Problem,
    w: PatchedW,
    law: FeedbackLaw,
}

#[wasm_bindgen]
impl Demo {
    /// `config` and `manifest` are the JSON texts written for and by `verify`.
    #[wasm_bindgen(constructor)]
    pub fn new(config: &str, manifest: &str) -> Result<Demo, JsError> {
        let cfg: ProjectConfig = serde_json::from_str(config).map_err(js_err)?;
        let m: RunManifest = serde_json::from_str(manifest).map_err(js_err)?;
        if m.status != "verified" {
            return Err(JsError::new(&format!("manifest status is {}", m.status)));
        }
        let problem = Problem::from_config(&cfg).map_err(js_err)?;
        if problem.sys.n() != 2 {
            return Err(JsError::new("the demo draws planar systems only"));
        }
        let w = certificate_from_manifest(&problem, &m).map_err(js_err)?;
        let outer = FeedbackLaw::for_bounds(w.clone(), &problem.sys, &problem.bounds).map_err(js_err)?;
        let law = blended_law(outer, problem.local.clone()).map_err(js_err)?;
        Ok(Demo { problem, w, law })
    }

    /// Domain as `[x1_lo, x1_hi, x2_lo, x2_hi]`.
    pub fn domain(&self) -> Vec<f64> {
        let d = self.problem.sys.domain();
        vec![d.get(0).lo, d.get(0).hi, d.get(1).lo, d.get(1).hi]
    }

    pub fn eps(&self) -> f64 {
        self.w.params().eps
    }

    pub fn alpha(&self) -> f64 {
        self.w.params().alpha
    }

    /// `W` and `h` on a `size x size` grid, row-major with x2 varying
    /// fastest: `[W_00, h_00, W_01, h_01, ...]`.
    pub fn field(&self, size: usize) -> Result<Vec<f64>, JsError> {
        let size = size.max(2);
        let d = self.domain();
        let mut out = Vec::with_capacity(2 * size * size);
        for i in 0..size {
            for j in 0..size {
                let x = [
                    d[0] + (d[1] - d[0]) * i as f64 / (size - 1) as f64,
                    d[2] + (d[3] - d[2]) * j as f64 / (size - 1) as f64,
                ];
                let p = self.w.eval(&x).map_err(js_err)?;
                out.push(p.w);
                out.push(p.h);
            }
        }
        Ok(out)
    }

    /// Closed-loop RK4 run from `(x1, x2)`. Rows of `[t, x1, x2, u.., h, W]`
    /// flattened; row length is `5 + m`.
    pub fn trajectory(&self, x1: f64, x2: f64, t_end: f64, dt: f64, stride: usize) -> Result<Vec<f64>, JsError> {
        let t = simulate_strided(
            &self.problem.sys,
            |x: &[f64]| self.law.eval(x),
            |x: &[f64]| self.w.eval(x).map(|p| (p.h, p.w)),
            &[x1, x2],
            t_end,
            dt,
            stride.max(1),
        )
        .map_err(js_err)?;
        let mut out = Vec::new();
        for k in 0..t.times.len() {
            out.push(t.times[k]);
            out.extend(&t.states[k]);
            out.extend(&t.inputs[k]);
            out.push(t.h[k]);
            out.push(t.w[k]);
        }
        Ok(out)
    }

    pub fn input_dim(&self) -> usize {
        self.problem.sys.m()
    }
}

/// Samples of the bump `b(h)` for `h` in `[1 - eps, 1]`, as `[h, b, ...]`.
#[wasm_bindgen]
pub fn bump_curve(eps: f64, samples: usize) -> Vec<f64> {
    let samples = samples.max(2);
    (0..samples)
        .flat_map(|k| {
            let h = 1.0 - eps + eps * k as f64 / (samples - 1) as f64;
            [h, bump(h, eps)]
        })
        .collect()
}
