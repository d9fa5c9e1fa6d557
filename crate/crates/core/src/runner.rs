//! Studies driven by an [`ExperimentConfig`], writing CSV artifacts.
//!
//! Each study writes into `<output_dir>/<study>/`: its CSV files, a
//! `manifest.toml` (config hash, seed, scale, config echo) and a
//! `failures.csv` listing failed checks. Files are written to a temporary
//! name and renamed into place.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::coefficients::{validate_assumption, CoefficientSpec, RegularityCertificate};
use crate::config::{ExperimentConfig, ScaleEcho};
use crate::entropy::{self, qv_comparison, StudySetup};
use crate::error::{Error, Result};
use crate::kernels::fd::{kernel_fd_oracle_with_tol, FdMesh};
use crate::kernels::{kernel_bridge_mc, kernel_surrogate, lemma1_envelope_with, make_kernel, TransitionKernel};
use crate::lamperti::TransformContext;
use crate::paths::simulate_ensemble;
use crate::rng::{self, Domain};
use crate::slln::{ksslln_diagnostic, slln_run};

/// Environment variable overriding the worker count.
pub const WORKERS_ENV: &str = "SRE_LAB_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Study {
    Validate,
    DensityCheck,
    EntropyConverge,
    QvCheck,
    Slln,
}

impl Study {
    pub const ALL: [Study; 5] = [
        Study::Validate,
        Study::DensityCheck,
        Study::EntropyConverge,
        Study::QvCheck,
        Study::Slln,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Study::Validate => "validate",
            Study::DensityCheck => "density-check",
            Study::EntropyConverge => "entropy-converge",
            Study::QvCheck => "qv-check",
            Study::Slln => "slln",
        }
    }
}

impl fmt::Display for Study {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Study {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Study::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Domain(format!("unknown study `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub dir: PathBuf,
    /// Files written, in order.
    pub artifacts: Vec<PathBuf>,
    pub failures: Vec<Failure>,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub check: String,
    pub message: String,
}

/// Sets the global rayon pool size from [`WORKERS_ENV`], if set. Call once,
/// before any parallel work.
pub fn configure_workers() -> Result<Option<usize>> {
    let Ok(v) = std::env::var(WORKERS_ENV) else {
        return Ok(None);
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::config(WORKERS_ENV, format!("must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Domain(e.to_string()))?;
    Ok(Some(n))
}

/// Writes through a temporary file and renames it into place.
fn write_atomic<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        fill(&mut w)?;
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn fmt_f(v: f64) -> String {
    format!("{v:?}")
}

fn certify(config: &ExperimentConfig, spec: &CoefficientSpec, which: &str) -> Result<RegularityCertificate> {
    validate_assumption(spec, config.validate.domain, config.validate.grid_points).map_err(|e| Error::Config {
        line: None,
        key: Some(which.to_string()),
        message: format!("coefficient `{}` fails certification: {e}", spec.name()),
    })
}

#[derive(Serialize)]
struct Manifest<'a> {
    study: &'a str,
    version: &'a str,
    config_sha256: String,
    seed: u64,
    start: f64,
    backend: &'a str,
    envelope_constants: &'a str,
    spec_q: &'a str,
    spec_p: &'a str,
    scale: ScaleEcho,
    config: &'a str,
}

fn config_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

struct Ctx {
    q: TransformContext,
    p: TransformContext,
    cert_q: RegularityCertificate,
    cert_p: RegularityCertificate,
}

/// Certifies both coefficients, runs `study` and writes its artifacts.
/// Failed study checks are reported in the outcome (and `failures.csv`),
/// not as an error.
pub fn run(config: &ExperimentConfig, study: Study) -> Result<RunOutcome> {
    let cert_q = certify(config, &config.spec_q, "q")?;
    let cert_p = certify(config, &config.spec_p, "p")?;
    let ctx = Ctx {
        q: TransformContext::new(config.spec_q.clone(), config.start)?,
        p: TransformContext::new(config.spec_p.clone(), config.start)?,
        cert_q,
        cert_p,
    };
    let dir = config.output_dir.join(study.name());
    fs::create_dir_all(&dir)?;
    let mut out = RunOutcome {
        dir: dir.clone(),
        artifacts: Vec::new(),
        failures: Vec::new(),
    };
    match study {
        Study::Validate => validate_study(&ctx, &mut out)?,
        Study::DensityCheck => density_study(config, &ctx, &mut out)?,
        Study::EntropyConverge => entropy_study(config, &ctx, &mut out)?,
        Study::QvCheck => qv_study(config, &ctx, &mut out)?,
        Study::Slln => slln_study(config, &ctx, &mut out)?,
    }

    let failures_path = dir.join("failures.csv");
    write_atomic(&failures_path, |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["check", "message"])?;
        for f in &out.failures {
            csv.write_record([&f.check, &f.message])?;
        }
        csv.flush()?;
        Ok(())
    })?;
    out.artifacts.push(failures_path);

    let manifest = Manifest {
        study: study.name(),
        version: env!("CARGO_PKG_VERSION"),
        config_sha256: config_hash(&config.source),
        seed: config.seed,
        start: config.start,
        backend: config.backend.label(),
        envelope_constants: match config.envelope_constants {
            crate::coefficients::ConstantSet::Stated => "stated",
            crate::coefficients::ConstantSet::Corrected => "corrected",
        },
        spec_q: config.spec_q.name(),
        spec_p: config.spec_p.name(),
        scale: config.scale_echo(),
        config: &config.source,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Domain(e.to_string()))?;
    let manifest_path = dir.join("manifest.toml");
    write_atomic(&manifest_path, |w| Ok(w.write_all(text.as_bytes())?))?;
    out.artifacts.push(manifest_path);
    Ok(out)
}

fn csv_artifact<F>(out: &mut RunOutcome, name: &str, fill: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    let path = out.dir.join(name);
    write_atomic(&path, fill)?;
    out.artifacts.push(path);
    Ok(())
}

fn validate_study(ctx: &Ctx, out: &mut RunOutcome) -> Result<()> {
    csv_artifact(out, "certificate.csv", |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record([
            "role",
            "spec",
            "delta",
            "l",
            "c1",
            "c2",
            "c2_corrected",
            "domain_lo",
            "domain_hi",
            "grid_points",
        ])?;
        for (role, c) in [("q", &ctx.cert_q), ("p", &ctx.cert_p)] {
            csv.write_record([
                role.to_string(),
                c.spec_name.clone(),
                fmt_f(c.delta),
                fmt_f(c.l),
                fmt_f(c.c1),
                fmt_f(c.c2),
                fmt_f(c.c2_corrected()),
                fmt_f(c.checked_domain.lo),
                fmt_f(c.checked_domain.hi),
                c.grid_points.to_string(),
            ])?;
        }
        csv.flush()?;
        Ok(())
    })
}

struct DensityRow {
    role: &'static str,
    t: f64,
    x: f64,
    y: f64,
    fd: f64,
    fd_budget: f64,
    bridge: f64,
    bridge_se: f64,
    surrogate: f64,
    lower: f64,
    upper: f64,
    in_envelope: bool,
    bridge_agrees: bool,
}

fn density_study(config: &ExperimentConfig, ctx: &Ctx, out: &mut RunOutcome) -> Result<()> {
    let d = &config.density;
    let slack = d.slack;
    let mut rows = Vec::new();
    for (role, tc, cert) in [("q", &ctx.q, &ctx.cert_q), ("p", &ctx.p, &ctx.cert_p)] {
        for &t in &d.t_list {
            for &x in &d.x_list {
                let ys: Vec<f64> = d.offsets.iter().map(|o| x + o).collect();
                let mut mesh = FdMesh::auto(tc, t, x, &ys);
                mesh.n_time = config.mesh.n_time;
                let table = kernel_fd_oracle_with_tol(tc, t, x, mesh, config.mesh.mass_tol)?;
                for &y in &ys {
                    let fd = table.eval(y)?;
                    let key = rows.len() as u64;
                    let seed = rng::derive_seed(config.seed, Domain::Bridge, key);
                    let bridge = kernel_bridge_mc(tc, t, x, y, config.scale.bridge_steps, config.scale.n_inner, seed)?;
                    let env = lemma1_envelope_with(cert, config.envelope_constants, tc, t, x, y)?;
                    let in_envelope = env.contains_with(fd.value, fd.disc_error + slack);
                    let bridge_agrees = (bridge.value - fd.value).abs() <= 3.0 * (bridge.std_error + slack);
                    rows.push(DensityRow {
                        role,
                        t,
                        x,
                        y,
                        fd: fd.value,
                        fd_budget: fd.disc_error,
                        bridge: bridge.value,
                        bridge_se: bridge.std_error,
                        surrogate: kernel_surrogate(tc, t, x, y)?.value,
                        lower: env.lower,
                        upper: env.upper,
                        in_envelope,
                        bridge_agrees,
                    });
                }
            }
        }
    }
    for r in &rows {
        if !r.in_envelope {
            out.failures.push(Failure {
                check: format!("envelope[{}]", r.role),
                message: format!(
                    "t={} x={} y={}: fd {:.6e} outside [{:.6e}, {:.6e}] with slack {:.1e}",
                    r.t,
                    r.x,
                    r.y,
                    r.fd,
                    r.lower,
                    r.upper,
                    r.fd_budget + slack
                ),
            });
        }
        if !r.bridge_agrees {
            out.failures.push(Failure {
                check: format!("bridge[{}]", r.role),
                message: format!(
                    "t={} x={} y={}: bridge {:.6e} (se {:.1e}) vs fd {:.6e}, tolerance {:.1e}",
                    r.t,
                    r.x,
                    r.y,
                    r.bridge,
                    r.bridge_se,
                    r.fd,
                    3.0 * (r.bridge_se + slack)
                ),
            });
        }
    }
    csv_artifact(out, "density_check.csv", |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record([
            "role",
            "t",
            "x",
            "y",
            "fd",
            "fd_budget",
            "bridge",
            "bridge_se",
            "surrogate",
            "env_lower",
            "env_upper",
            "in_envelope",
            "bridge_agrees",
        ])?;
        for r in &rows {
            csv.write_record([
                r.role.to_string(),
                fmt_f(r.t),
                fmt_f(r.x),
                fmt_f(r.y),
                fmt_f(r.fd),
                fmt_f(r.fd_budget),
                fmt_f(r.bridge),
                fmt_f(r.bridge_se),
                fmt_f(r.surrogate),
                fmt_f(r.lower),
                fmt_f(r.upper),
                r.in_envelope.to_string(),
                r.bridge_agrees.to_string(),
            ])?;
        }
        csv.flush()?;
        Ok(())
    })
}

fn kernels(config: &ExperimentConfig, ctx: &Ctx) -> Result<(Box<dyn TransitionKernel>, Box<dyn TransitionKernel>)> {
    let s = &config.scale;
    let kq = make_kernel(
        config.backend,
        &ctx.q,
        s.bridge_steps,
        s.n_inner,
        rng::derive_seed(config.seed, Domain::Kernel, 0),
    )?;
    let kp = make_kernel(
        config.backend,
        &ctx.p,
        s.bridge_steps,
        s.n_inner,
        rng::derive_seed(config.seed, Domain::Kernel, 1),
    )?;
    Ok((kq, kp))
}

fn entropy_study(config: &ExperimentConfig, ctx: &Ctx, out: &mut RunOutcome) -> Result<()> {
    let (kq, kp) = kernels(config, ctx)?;
    let setup = StudySetup {
        ctx_q: &ctx.q,
        ctx_p: &ctx.p,
        cert_q: &ctx.cert_q,
        cert_p: &ctx.cert_p,
        kernel_q: kq.as_ref(),
        kernel_p: kp.as_ref(),
        constants: config.envelope_constants,
    };
    let s = &config.scale;
    let study = entropy::convergence_study(
        &s.n_list,
        |n| simulate_ensemble(&ctx.q, config.start, n, s.substeps, s.n_paths, config.seed),
        &setup,
    )?;
    out.failures.extend(study.failures.iter().map(|m| Failure {
        check: "bracket".into(),
        message: m.clone(),
    }));
    csv_artifact(out, "entropy_converge.csv", |w| entropy::write_convergence_csv(&study.rows, w))
}

fn qv_study(config: &ExperimentConfig, ctx: &Ctx, out: &mut RunOutcome) -> Result<()> {
    let s = &config.scale;
    let n_max = *s.n_list.last().expect("n_list is nonempty");
    let ens = simulate_ensemble(&ctx.q, config.start, n_max, s.substeps, s.n_paths, config.seed)?;
    let mut rows = Vec::new();
    for &n in &s.n_list {
        let c = if n_max % n == 0 {
            qv_comparison(&ens, &ctx.q, &ctx.p, n)?
        } else {
            let own = simulate_ensemble(&ctx.q, config.start, n, s.substeps, s.n_paths, config.seed)?;
            qv_comparison(&own, &ctx.q, &ctx.p, n)?
        };
        rows.push(c);
    }
    let last = rows.last().expect("nonempty");
    let tol = 3.0 * last.difference.std_error;
    if last.difference.value.abs() > tol {
        out.failures.push(Failure {
            check: "qv".into(),
            message: format!(
                "n={}: riemann {:.6} vs quadrature {:.6}, paired difference {:.3e} exceeds {:.3e}",
                n_max, last.riemann.value, last.quadrature.value, last.difference.value, tol
            ),
        });
    }
    csv_artifact(out, "qv_check.csv", |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record([
            "n",
            "riemann",
            "riemann_se",
            "quadrature",
            "quadrature_se",
            "difference",
            "difference_se",
            "tolerance",
        ])?;
        for r in &rows {
            csv.write_record([
                r.riemann.n.to_string(),
                fmt_f(r.riemann.value),
                fmt_f(r.riemann.std_error),
                fmt_f(r.quadrature.value),
                fmt_f(r.quadrature.std_error),
                fmt_f(r.difference.value),
                fmt_f(r.difference.std_error),
                fmt_f(3.0 * r.difference.std_error),
            ])?;
        }
        csv.flush()?;
        Ok(())
    })
}

fn slln_study(config: &ExperimentConfig, ctx: &Ctx, out: &mut RunOutcome) -> Result<()> {
    let (kq, kp) = kernels(config, ctx)?;
    let sc = &config.slln;
    let substeps = config.scale.substeps;
    let mut runs = Vec::with_capacity(sc.reps);
    for r in 0..sc.reps {
        let master = rng::derive_seed(config.seed, Domain::Slln, r as u64);
        runs.push(slln_run(&ctx.q, config.start, sc.n_max, substeps, kq.as_ref(), kp.as_ref(), master)?);
    }
    let k_list: Vec<usize> = (sc.k_min..=sc.k_max).collect();
    let report = ksslln_diagnostic(
        &ctx.q,
        config.start,
        &k_list,
        sc.k_reps,
        substeps,
        kq.as_ref(),
        kp.as_ref(),
        rng::derive_seed(config.seed, Domain::Diagnostic, 0),
    )?;
    csv_artifact(out, "slln.csv", |w| runs[0].write_csv(w))?;
    csv_artifact(out, "slln_runs.csv", |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["run", "master_seed", "n_max", "running_avg"])?;
        for (r, run) in runs.iter().enumerate() {
            csv.write_record([
                r.to_string(),
                run.master_seed.to_string(),
                run.n_max.to_string(),
                fmt_f(*run.running_avg.last().expect("n_max >= 1")),
            ])?;
        }
        csv.flush()?;
        Ok(())
    })?;
    csv_artifact(out, "kslln.csv", |w| report.write_csv(w))?;
    csv_artifact(out, "kslln_fit.csv", |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["k_min", "k_max", "reps", "variance_exponent", "partial_sum_exponent"])?;
        csv.write_record([
            sc.k_min.to_string(),
            sc.k_max.to_string(),
            sc.k_reps.to_string(),
            fmt_f(report.variance_exponent),
            fmt_f(report.partial_sum_exponent),
        ])?;
        csv.flush()?;
        Ok(())
    })
}
