//! JSON project configuration and its resolution into model objects.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::certificates::{kleinman_lqr, softmax_barrier, softmax_barrier_stable, LqrSolution, ScaleOptions};
use crate::error::{Error, Result};
use crate::expr::{Expr, HyperBox};
use crate::linalg::{from_rows, to_rows};
use crate::system::{ControlAffineSystem, ConstraintSet, InputBounds};
use crate::verifier::{CompatEncoding, LocalCertificate, VerifyOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    pub name: String,
    pub system: SystemConfig,
    /// `h_i`, each defining `{h_i <= 1}`.
    pub constraints: Vec<String>,
    pub input_bounds: InputBounds,
    pub softmax: SoftmaxConfig,
    pub clf: ClfConfig,
    pub patch: PatchConfig,
    #[serde(default)]
    pub verifier: VerifierConfig,
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub outputs: OutputsConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub n: usize,
    pub m: usize,
    pub f: Vec<String>,
    /// Row-major `n x m`.
    pub g: Vec<Vec<String>>,
    pub domain: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SoftmaxConfig {
    pub tau: f64,
}

/// Quadratic CLF `x^T P x` with the local law `u = -K x` and base level `c`,
/// either given directly or produced by LQR on the linearization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ClfConfig {
    Quadratic {
        p: Vec<Vec<f64>>,
        k: Vec<Vec<f64>>,
        c: f64,
    },
    Lqr {
        q: Vec<Vec<f64>>,
        r: Vec<Vec<f64>>,
        k0: Vec<Vec<f64>>,
        c: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchConfig {
    pub eps_schedule: Vec<f64>,
    #[serde(default = "default_encoding")]
    pub compat_encoding: CompatEncoding,
    #[serde(default = "default_gap")]
    pub scale_gap: f64,
    /// Level bisection resolution applied to the certified maximum of `V`.
    #[serde(default)]
    pub scale_resolution: Option<f64>,
}

impl PatchConfig {
    pub fn scale_options(&self) -> ScaleOptions {
        ScaleOptions {
            gap: self.scale_gap,
            resolution: self.scale_resolution,
            ..ScaleOptions::default()
        }
    }
}

fn default_encoding() -> CompatEncoding {
    CompatEncoding::Reduced
}

fn default_gap() -> f64 {
    1e-4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifierConfig {
    pub delta: f64,
    pub min_width: f64,
    pub budget: u64,
    pub workers: usize,
    pub emit_smt2: bool,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        let d = VerifyOptions::default();
        VerifierConfig {
            delta: d.delta,
            min_width: d.min_width,
            budget: d.budget,
            workers: d.workers,
            emit_smt2: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub t_end: f64,
    pub dt: f64,
    pub count: usize,
    pub seed: u64,
    /// Keep every k-th integration step in the trajectory files.
    #[serde(default = "default_stride")]
    pub record_stride: usize,
}

fn default_stride() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputsConfig {
    pub dir: String,
    /// Points per axis of the exported grids.
    pub grid: usize,
    /// The two state axes spanned by the grids; other coordinates are 0.
    pub grid_axes: [usize; 2],
}

impl Default for OutputsConfig {
    fn default() -> Self {
        OutputsConfig {
            dir: "out".into(),
            grid: 400,
            grid_axes: [0, 1],
        }
    }
}

impl ProjectConfig {
    pub fn load(path: &Path) -> Result<(ProjectConfig, String)> {
        let bytes = std::fs::read(path)?;
        let cfg: ProjectConfig =
            serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok((cfg, hash_bytes(&bytes)))
    }

    pub fn verify_options(&self) -> VerifyOptions {
        VerifyOptions {
            delta: self.verifier.delta,
            min_width: self.verifier.min_width,
            budget: self.verifier.budget,
            workers: self.verifier.workers.max(1),
        }
    }
}

/// Hex SHA-256.
pub fn hash_bytes(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// A configuration resolved into model objects.
#[derive(Clone, Debug)]
pub struct Problem {
    pub sys: ControlAffineSystem,
    pub constraints: ConstraintSet,
    pub bounds: InputBounds,
    /// Softmax barrier, unshifted and max-shifted forms.
    pub h: Expr,
    pub h_stable: Expr,
    /// Unscaled quadratic CLF.
    pub v: Expr,
    pub local: LocalCertificate,
    pub lqr: Option<LqrSolution>,
}

fn parse(src: &str, n: usize, what: &str) -> Result<Expr> {
    Expr::parse(src, n).map_err(|e| Error::Config(format!("{what} `{src}`: {e}")))
}

impl Problem {
    pub fn from_config(cfg: &ProjectConfig) -> Result<Problem> {
        let s = &cfg.system;
        let (n, m) = (s.n, s.m);
        if n == 0 || m == 0 {
            return Err(Error::Config("n and m must be positive".into()));
        }
        if s.f.len() != n || s.g.len() != n || s.g.iter().any(|r| r.len() != m) || s.domain.len() != n {
            return Err(Error::Config(format!("system shapes do not match n = {n}, m = {m}")));
        }
        let f = s
            .f
            .iter()
            .enumerate()
            .map(|(i, e)| parse(e, n, &format!("f{}", i + 1)))
            .collect::<Result<Vec<_>>>()?;
        let g = s
            .g
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .map(|(j, e)| parse(e, n, &format!("g{}{}", i + 1, j + 1)))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let bounds: Vec<(f64, f64)> = s.domain.iter().map(|d| (d[0], d[1])).collect();
        if bounds.iter().any(|(lo, hi)| !(lo < hi)) {
            return Err(Error::Config("domain intervals must be nonempty".into()));
        }
        let sys = ControlAffineSystem::new(f, g, HyperBox::from_bounds(&bounds)).map_err(config_err)?;
        if cfg.constraints.is_empty() {
            return Err(Error::Config("empty constraint list".into()));
        }
        let hs = cfg
            .constraints
            .iter()
            .enumerate()
            .map(|(i, e)| parse(e, n, &format!("h{}", i + 1)))
            .collect::<Result<Vec<_>>>()?;
        let constraints = ConstraintSet::new(hs).map_err(config_err)?;
        cfg.input_bounds.validate(m).map_err(config_err)?;
        let h = softmax_barrier(&constraints, cfg.softmax.tau).map_err(config_err)?;
        let h_stable = softmax_barrier_stable(&constraints, cfg.softmax.tau).map_err(config_err)?;
        let (local, lqr) = match &cfg.clf {
            ClfConfig::Quadratic { p, k, c } => (
                LocalCertificate {
                    p: p.clone(),
                    k: k.clone(),
                    c: *c,
                },
                None,
            ),
            ClfConfig::Lqr { q, r, k0, c } => {
                let (a, b) = sys.linearization()?;
                let sol = kleinman_lqr(&a, &b, &from_rows(q)?, &from_rows(r)?, &from_rows(k0)?)?;
                (
                    LocalCertificate {
                        p: to_rows(&sol.p),
                        k: to_rows(&sol.k),
                        c: *c,
                    },
                    Some(sol),
                )
            }
        };
        let pm = local.p_matrix()?;
        let km = local.k_matrix()?;
        if pm.shape() != (n, n) || km.shape() != (m, n) {
            return Err(Error::Config("CLF matrices have the wrong shape".into()));
        }
        let v = local.v()?;
        if cfg.patch.eps_schedule.is_empty() {
            return Err(Error::Config("empty eps schedule".into()));
        }
        Ok(Problem {
            sys,
            constraints,
            bounds: cfg.input_bounds.clone(),
            h,
            h_stable,
            v,
            local,
            lqr,
        })
    }
}

fn config_err(e: Error) -> Error {
    match e {
        Error::InvalidModel(s) | Error::InvalidArgument(s) => Error::Config(s),
        other => other,
    }
}
