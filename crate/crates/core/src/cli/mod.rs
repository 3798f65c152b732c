//! Command-line pipeline: `verify`, `build`, `simulate`, `emit-smt2`.
//!
//! Exit codes: 0 all checks verified (or command succeeded), 1 some check
//! falsified, 2 some check unknown, 3 config, IO or prerequisite error.

pub mod config;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::certificates::{patch, scale_clf, PatchParams, PatchedW, ScaleBound};
use crate::controllers::{blended_law, FeedbackLaw, LawKind};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::simulator::{batch_report, sample_in_c, BatchReport};
use crate::system::InputBounds;
use crate::verifier::{
    cbf_conditions, check_cbf, check_clf, check_local, clf_conditions, compat_conditions, local_inner_radius,
    local_outer_condition, scan_epsilon, smt2, LocalCertificate, LocalReport, VerificationVerdict,
};

pub use config::{ProjectConfig, Problem};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FALSIFIED: u8 = 1;
pub const EXIT_UNKNOWN: u8 = 2;
pub const EXIT_ERROR: u8 = 3;

pub const MANIFEST: &str = "manifest.json";
pub const CERTIFICATE: &str = "certificate.json";
pub const SUMMARY: &str = "summary.json";

#[derive(Debug, Parser)]
#[command(name = "clbf", version, about = "Verified control Lyapunov-barrier functions under bounded inputs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Verify barrier, local, Lyapunov and compatibility conditions.
    Verify(CommonArgs),
    /// Patch the verified certificate and export grids.
    Build(CommonArgs),
    /// Simulate the closed loop from sampled starts.
    Simulate(CommonArgs),
    /// Write every verification condition as an SMT-LIB2 file.
    #[command(name = "emit-smt2")]
    EmitSmt2(CommonArgs),
}

#[derive(Clone, Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (overrides the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub delta: Option<f64>,
}

/// Result of one check; `verdict` is `None` when the check was skipped
/// because an earlier one did not verify.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub name: String,
    pub verdict: Option<VerificationVerdict>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    pub config_hash: String,
    pub status: String,
    pub delta: f64,
    pub checks: Vec<CheckRecord>,
    pub local: LocalCertificate,
    pub local_report: Option<LocalReport>,
    pub scale: Option<ScaleBound>,
    pub eps: Option<f64>,
    pub alpha: Option<f64>,
    pub eps_tried: Vec<(f64, String)>,
    pub outputs: Vec<String>,
    /// Wall-clock seconds per stage; the only nondeterministic field.
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn check(&self, name: &str) -> Option<&VerificationVerdict> {
        self.checks.iter().find(|c| c.name == name).and_then(|c| c.verdict.as_ref())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateFile {
    pub config_hash: String,
    pub tau: f64,
    pub eps: f64,
    pub alpha: f64,
    pub h: String,
    pub h_stable: String,
    pub v_scaled: String,
    pub local: LocalCertificate,
    pub law: LawKind,
}

/// Parse arguments and run; returns the process exit code.
pub fn run_from_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli.command),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_ERROR
            } else {
                EXIT_OK
            }
        }
    }
}

pub fn run(cmd: &Command) -> u8 {
    let res = match cmd {
        Command::Verify(a) => cmd_verify(a),
        Command::Build(a) => cmd_build(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::EmitSmt2(a) => cmd_emit_smt2(a),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

struct Session {
    cfg: ProjectConfig,
    hash: String,
    problem: Problem,
    out: PathBuf,
}

fn open(args: &CommonArgs) -> Result<Session> {
    let (mut cfg, hash) = ProjectConfig::load(&args.config)?;
    if let Some(w) = args.workers {
        cfg.verifier.workers = w;
    }
    if let Some(d) = args.delta {
        if !(d > 0.0) {
            return Err(Error::Config(format!("delta must be positive, got {d}")));
        }
        cfg.verifier.delta = d;
    }
    let out = match &args.out {
        Some(p) => p.clone(),
        None => PathBuf::from(&cfg.outputs.dir),
    };
    let problem = Problem::from_config(&cfg)?;
    std::fs::create_dir_all(&out)?;
    Ok(Session { cfg, hash, problem, out })
}

/// Write through a temporary file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::Unverified(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn describe(v: &VerificationVerdict) -> String {
    match v {
        VerificationVerdict::Verified { delta, boxes_processed } => {
            format!("verified (delta {delta:e}, {boxes_processed} boxes)")
        }
        VerificationVerdict::Falsified {
            witness,
            premise_residuals,
            conclusion,
        } => format!("falsified at {witness:?} (lhs - rhs = {conclusion:e}, premise residuals {premise_residuals:?})"),
        VerificationVerdict::Unknown { reason } => format!("unknown ({reason})"),
    }
}

fn exit_for(v: &VerificationVerdict) -> u8 {
    match v {
        VerificationVerdict::Verified { .. } => EXIT_OK,
        VerificationVerdict::Falsified { .. } => EXIT_FALSIFIED,
        VerificationVerdict::Unknown { .. } => EXIT_UNKNOWN,
    }
}

/// Run all checks in order: barrier, local base region, scaling bound, band
/// compatibility over the eps schedule, Lyapunov decrease on the scaled `V`.
/// The first check that does not verify ends the run.
pub fn verify_problem(cfg: &ProjectConfig, hash: &str, pb: &Problem) -> Result<RunManifest> {
    let opts = cfg.verify_options();
    let mut m = RunManifest {
        name: cfg.name.clone(),
        config_hash: hash.to_string(),
        status: String::new(),
        delta: opts.delta,
        checks: ["cbf", "local", "compat", "clf"]
            .iter()
            .map(|n| CheckRecord {
                name: n.to_string(),
                verdict: None,
            })
            .collect(),
        local: pb.local.clone(),
        local_report: None,
        scale: None,
        eps: None,
        alpha: None,
        eps_tried: Vec::new(),
        outputs: vec![MANIFEST.to_string()],
        timings: BTreeMap::new(),
    };
    let total = Instant::now();
    let finish = |mut m: RunManifest, v: VerificationVerdict| {
        m.status = v.label().to_string();
        m.timings.insert("total".into(), total.elapsed().as_secs_f64());
        m
    };
    let set = |m: &mut RunManifest, name: &str, v: &VerificationVerdict| {
        if let Some(c) = m.checks.iter_mut().find(|c| c.name == name) {
            c.verdict = Some(v.clone());
        }
    };

    let t = Instant::now();
    let cbf = check_cbf(&pb.h, &pb.sys, &pb.bounds, &opts)?;
    m.timings.insert("cbf".into(), t.elapsed().as_secs_f64());
    set(&mut m, "cbf", &cbf);
    if !cbf.is_verified() {
        return Ok(finish(m, cbf));
    }

    let t = Instant::now();
    let local = check_local(&pb.local, &pb.sys, &pb.bounds, &opts)?;
    m.timings.insert("local".into(), t.elapsed().as_secs_f64());
    set(&mut m, "local", &local.verdict);
    let lv = local.verdict.clone();
    m.local_report = Some(local);
    if !lv.is_verified() {
        return Ok(finish(m, lv));
    }

    let t = Instant::now();
    let sopts = cfg.patch.scale_options();
    let scale = scale_clf(&pb.v, &pb.h, cfg.patch.eps_schedule[0], pb.sys.domain(), sopts);
    m.timings.insert("scale".into(), t.elapsed().as_secs_f64());
    let scale = match scale {
        Ok(s) => s,
        Err(Error::Budget(reason)) => {
            let v = VerificationVerdict::Unknown { reason };
            set(&mut m, "compat", &v);
            return Ok(finish(m, v));
        }
        Err(e) => return Err(e),
    };
    m.scale = Some(scale.clone());

    let t = Instant::now();
    let search = scan_epsilon(
        &pb.v,
        &pb.h,
        &pb.sys,
        &pb.bounds,
        &cfg.patch.eps_schedule,
        Some(&scale),
        cfg.patch.compat_encoding,
        &opts,
    )?;
    m.timings.insert("compat".into(), t.elapsed().as_secs_f64());
    m.eps_tried = search.tried.iter().map(|(e, v)| (*e, v.label().to_string())).collect();
    set(&mut m, "compat", &search.verdict);
    if !search.verdict.is_verified() {
        return Ok(finish(m, search.verdict));
    }
    m.eps = Some(search.eps);
    m.alpha = Some(search.alpha);
    m.scale = Some(scale.with_eps(search.eps)?);

    let t = Instant::now();
    let vs = (search.alpha * &pb.v).simplify();
    let clf = check_clf(&vs, &pb.h, &pb.sys, &pb.bounds, search.alpha * pb.local.c, &opts)?;
    m.timings.insert("clf".into(), t.elapsed().as_secs_f64());
    set(&mut m, "clf", &clf);
    Ok(finish(m, clf))
}

fn print_manifest(m: &RunManifest) {
    for c in &m.checks {
        match &c.verdict {
            Some(v) => {
                let t = m.timings.get(&c.name).copied().unwrap_or(0.0);
                println!("{:<7} {} [{t:.2} s]", c.name, describe(v));
            }
            None => println!("{:<7} skipped", c.name),
        }
    }
    if let Some(r) = &m.local_report {
        if let Some(f) = &r.failed {
            println!("local sub-check failed: {f}");
        }
    }
    if let (Some(eps), Some(alpha)) = (m.eps, m.alpha) {
        println!("eps = {eps}, alpha = {alpha:.17e}");
    }
    println!("status: {}", m.status);
}

pub fn cmd_verify(args: &CommonArgs) -> Result<u8> {
    let s = open(args)?;
    let mut m = verify_problem(&s.cfg, &s.hash, &s.problem)?;
    if s.cfg.verifier.emit_smt2 {
        m.outputs.extend(emit_all(&s, m.scale.as_ref())?);
    }
    write_json(&s.out.join(MANIFEST), &m)?;
    print_manifest(&m);
    let worst = VerificationVerdict::combine(m.checks.iter().filter_map(|c| c.verdict.clone()).collect());
    Ok(exit_for(&worst))
}

fn load_verified(s: &Session) -> Result<RunManifest> {
    let m: RunManifest = read_json(&s.out.join(MANIFEST))?;
    if m.config_hash != s.hash {
        return Err(Error::Unverified("manifest was produced from a different config".into()));
    }
    if m.status != "verified" || m.checks.iter().any(|c| !c.verdict.as_ref().is_some_and(|v| v.is_verified())) {
        return Err(Error::Unverified(format!("manifest status is {}", m.status)));
    }
    Ok(m)
}

/// Rebuild the patched certificate from a verified manifest.
pub fn certificate_from_manifest(pb: &Problem, m: &RunManifest) -> Result<PatchedW> {
    let (Some(eps), Some(alpha), Some(scale)) = (m.eps, m.alpha, m.scale.as_ref()) else {
        return Err(Error::Unverified("manifest lacks eps, alpha or scale bound".into()));
    };
    let compat = m
        .check("compat")
        .ok_or_else(|| Error::Unverified("manifest lacks the compatibility verdict".into()))?;
    let vs = (alpha * &pb.v).simplify();
    patch(&vs, &pb.h, &pb.h_stable, PatchParams::new(eps, alpha)?, compat, scale)
}

fn write_grids(s: &Session, w: &PatchedW) -> Result<Vec<String>> {
    let n = s.problem.sys.n();
    let g = s.cfg.outputs.grid.max(2);
    let [a0, a1] = s.cfg.outputs.grid_axes;
    if a0 >= n || a1 >= n || a0 == a1 {
        return Err(Error::Config("grid axes out of range".into()));
    }
    let dom = s.problem.sys.domain();
    let (ia, ib) = (dom.get(a0), dom.get(a1));
    let mut head = String::from("i,j");
    (1..=n).for_each(|k| {
        let _ = write!(head, ",x{k}");
    });
    let mut wcsv = format!("{head},W\n");
    let mut hcsv = format!("{head},h\n");
    let mut x = vec![0.0; n];
    for i in 0..g {
        for j in 0..g {
            x[a0] = ia.lo + (ia.hi - ia.lo) * i as f64 / (g - 1) as f64;
            x[a1] = ib.lo + (ib.hi - ib.lo) * j as f64 / (g - 1) as f64;
            let mut row = format!("{i},{j}");
            x.iter().for_each(|v| {
                let _ = write!(row, ",{v:.16e}");
            });
            let p = w.eval(&x)?;
            let _ = writeln!(wcsv, "{row},{:.16e}", p.w);
            let _ = writeln!(hcsv, "{row},{:.16e}", p.h);
        }
    }
    write_atomic(&s.out.join("w_grid.csv"), wcsv.as_bytes())?;
    write_atomic(&s.out.join("h_grid.csv"), hcsv.as_bytes())?;
    Ok(vec!["w_grid.csv".into(), "h_grid.csv".into()])
}

fn law_kind(bounds: &InputBounds) -> LawKind {
    match bounds {
        InputBounds::Ball { .. } => LawKind::BallUniversal,
        InputBounds::Box { .. } => LawKind::BoxMinnorm,
    }
}

pub fn cmd_build(args: &CommonArgs) -> Result<u8> {
    let s = open(args)?;
    let mut m = load_verified(&s)?;
    let w = certificate_from_manifest(&s.problem, &m)?;
    let params = w.params();
    let cert = CertificateFile {
        config_hash: s.hash.clone(),
        tau: s.cfg.softmax.tau,
        eps: params.eps,
        alpha: params.alpha,
        h: s.problem.h.to_sexpr(),
        h_stable: s.problem.h_stable.to_sexpr(),
        v_scaled: w.v_scaled().to_sexpr(),
        local: s.problem.local.clone(),
        law: law_kind(&s.problem.bounds),
    };
    write_json(&s.out.join(CERTIFICATE), &cert)?;
    let mut outs = vec![CERTIFICATE.to_string()];
    outs.extend(write_grids(&s, &w)?);
    for o in &outs {
        println!("wrote {}", s.out.join(o).display());
    }
    for o in outs {
        if !m.outputs.contains(&o) {
            m.outputs.push(o);
        }
    }
    write_json(&s.out.join(MANIFEST), &m)?;
    Ok(EXIT_OK)
}

/// Feedback law and monitor for a built certificate.
pub fn law_from_certificate(pb: &Problem, m: &RunManifest, cert: &CertificateFile) -> Result<(FeedbackLaw, PatchedW)> {
    let w = certificate_from_manifest(pb, m)?;
    let stored = Expr::from_sexpr(&cert.v_scaled)?;
    if stored.to_sexpr() != w.v_scaled().to_sexpr() || cert.eps != w.params().eps || cert.alpha != w.params().alpha {
        return Err(Error::Unverified("certificate file does not match the manifest".into()));
    }
    let outer = FeedbackLaw::for_bounds(w.clone(), &pb.sys, &pb.bounds)?;
    Ok((blended_law(outer, cert.local.clone())?, w))
}

pub fn cmd_simulate(args: &CommonArgs) -> Result<u8> {
    let s = open(args)?;
    let mut m = load_verified(&s)?;
    let cert: CertificateFile = read_json(&s.out.join(CERTIFICATE))?;
    if cert.config_hash != s.hash {
        return Err(Error::Unverified("certificate was built from a different config".into()));
    }
    let (law, w) = law_from_certificate(&s.problem, &m, &cert)?;
    if law.kind() == LawKind::BoxMinnorm {
        println!("box inputs: pointwise min-norm selection (decrease margin 0.5) in place of a closed-form box formula");
    }
    let sc = &s.cfg.simulate;
    let starts = sample_in_c(&s.problem.h_stable, s.problem.sys.domain(), sc.count, sc.seed)?;
    let (report, trajs) = batch_report(
        &s.problem.sys,
        |x: &[f64]| law.eval(x),
        |x: &[f64]| w.eval(x).map(|p| (p.h, p.w)),
        &starts,
        sc.t_end,
        sc.dt,
        sc.record_stride,
        s.cfg.verifier.workers.max(1),
    )?;
    let mut outs = Vec::new();
    for (i, t) in trajs.iter().enumerate() {
        if let Ok(t) = t {
            let name = format!("traj_{i:03}.csv");
            write_atomic(&s.out.join(&name), t.to_csv().as_bytes())?;
            outs.push(name);
        }
    }
    write_json(&s.out.join(SUMMARY), &report)?;
    outs.push(SUMMARY.to_string());
    print_report(&report);
    for o in outs {
        if !m.outputs.contains(&o) {
            m.outputs.push(o);
        }
    }
    write_json(&s.out.join(MANIFEST), &m)?;
    Ok(if report.failures == 0 { EXIT_OK } else { EXIT_ERROR })
}

fn print_report(r: &BatchReport) {
    println!(
        "{} runs, {} failed; worst max h = {:.9}, worst |u| = {:.9}, worst final |x| = {:.3e}",
        r.runs.len(),
        r.failures,
        r.worst_max_h,
        r.worst_u_norm,
        r.worst_final_norm
    );
    println!("input range per axis: min {:?}, max {:?}", r.worst_u_min, r.worst_u_max);
    for run in r.runs.iter().filter(|r| r.error.is_some()) {
        println!("run {}: {}", run.index, run.error.as_deref().unwrap_or(""));
    }
}

/// SMT-LIB2 files for every condition: barrier, local outer region, band
/// compatibility for the first scheduled eps and Lyapunov decrease. `V` is
/// scaled by `alpha(eps)` when a scale bound is available.
fn emit_all(s: &Session, scale: Option<&ScaleBound>) -> Result<Vec<String>> {
    let pb = &s.problem;
    let eps = scale.map_or(s.cfg.patch.eps_schedule[0], |b| b.eps);
    let alpha = scale.map_or(1.0, |b| b.alpha);
    let vs = (alpha * &pb.v).simplify();
    let mut conds = cbf_conditions(&pb.h, &pb.sys, &pb.bounds)?;
    if let Some(r0) = local_inner_radius(&pb.local, &pb.sys)? {
        conds.push(local_outer_condition(&pb.local, &pb.sys, r0)?);
    }
    conds.extend(compat_conditions(&vs, &pb.h, &pb.sys, &pb.bounds, eps, s.cfg.patch.compat_encoding)?);
    conds.extend(clf_conditions(&vs, &pb.h, &pb.sys, &pb.bounds, alpha * pb.local.c)?);
    let dir = s.out.join("smt2");
    std::fs::create_dir_all(&dir)?;
    let mut outs = Vec::new();
    for c in &conds {
        let name = format!("smt2/{}.smt2", c.name);
        write_atomic(&s.out.join(&name), smt2::render(c).as_bytes())?;
        outs.push(name);
    }
    Ok(outs)
}

pub fn cmd_emit_smt2(args: &CommonArgs) -> Result<u8> {
    let s = open(args)?;
    let sopts = s.cfg.patch.scale_options();
    let scale = scale_clf(&s.problem.v, &s.problem.h, s.cfg.patch.eps_schedule[0], s.problem.sys.domain(), sopts)?;
    let outs = emit_all(&s, Some(&scale))?;
    for o in &outs {
        println!("wrote {}", s.out.join(o).display());
    }
    Ok(EXIT_OK)
}
