//! Estimators for the specific relative entropy of `Q` (coefficient sigma)
//! with respect to `P` (coefficient eta), both started at the same point.
//!
//! * [`closed_form_functional`]: `½ E_Q[∫_0^1 Γ(sigma^2/eta^2)(M_s) ds]`.
//! * [`discrete_entropy_mc`]: `H_n / n` from the chain rule
//!   `H_n = Σ_k E[ln q(1/n, M_{k-1}, M_k) - ln p(1/n, M_{k-1}, M_k)]`.
//! * [`proof_functional_bracket`]: pathwise upper/lower functionals obtained
//!   by plugging the density envelopes into the chain rule; the per-increment
//!   boundary logs telescope to a single term.
//! * [`qv_riemann_sum`]: `E[Σ_k d_eta(M_{k-1}, M_k)^2]`, which tends to
//!   `E[∫ (sigma/eta)^2(M_s) ds]`.
//!
//! All expectations under `Q` reuse one path ensemble, and every reduction
//! runs over per-path values in path order.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::coefficients::{gamma_unchecked, ConstantSet, RegularityCertificate};
use crate::error::{Error, Result};
use crate::kernels::{Backend, TransitionKernel};
use crate::lamperti::TransformContext;
use crate::paths::{stride, PathEnsemble};
use crate::stats::{combine_se, MeanSe};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ClosedForm,
    DiscreteMc,
    BracketUpper,
    BracketLower,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyEstimate {
    /// Nats.
    pub value: f64,
    pub std_error: f64,
    pub n: usize,
    pub n_paths: usize,
    pub method: Method,
    /// Inner sample count of Monte Carlo density backends, if any.
    pub n_inner: Option<usize>,
    /// Delta-method bound on the bias from taking logs of Monte Carlo
    /// density estimates.
    pub log_bias_bound: Option<f64>,
}

impl EntropyEstimate {
    fn from_samples(samples: &[f64], n: usize, method: Method) -> Self {
        let s = MeanSe::from_samples(samples);
        Self {
            value: s.mean,
            std_error: s.se,
            n,
            n_paths: samples.len(),
            method,
            n_inner: None,
            log_bias_bound: None,
        }
    }
}

/// Plain Monte Carlo scalar with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n: usize,
    pub n_paths: usize,
}

impl ScalarEstimate {
    fn from_samples(samples: &[f64], n: usize) -> Self {
        let s = MeanSe::from_samples(samples);
        Self {
            value: s.mean,
            std_error: s.se,
            n,
            n_paths: samples.len(),
        }
    }
}

#[inline]
fn half_gamma_ratio(s: f64, e: f64) -> f64 {
    let r = s / e;
    0.5 * gamma_unchecked(r * r)
}

/// `½ E[∫_0^1 Γ(sigma^2/eta^2)(M_s) ds]` with a trapezoid time integral on
/// each path's substep grid.
pub fn closed_form_functional(
    ctx_q: &TransformContext,
    ctx_p: &TransformContext,
    ensemble: &PathEnsemble,
) -> Result<EntropyEstimate> {
    if ensemble.is_empty() {
        return Err(Error::Domain("empty ensemble".into()));
    }
    let (sq, sp) = (ctx_q.spec(), ctx_p.spec());
    let samples = if let (Some(a), Some(b)) = (sq.as_constant(), sp.as_constant()) {
        // Constant integrand: every path integral equals the integrand.
        vec![half_gamma_ratio(a, b); ensemble.len()]
    } else {
        ensemble.fine_integrals(ctx_q, |x| half_gamma_ratio(sq.value(x), sp.value(x)))?
    };
    Ok(EntropyEstimate::from_samples(&samples, ensemble.n(), Method::ClosedForm))
}

/// `H_n / n` estimated on the ensemble observed at resolution `n`.
pub fn discrete_entropy_mc(
    n: usize,
    ensemble: &PathEnsemble,
    kernel_q: &dyn TransitionKernel,
    kernel_p: &dyn TransitionKernel,
) -> Result<EntropyEstimate> {
    if ensemble.is_empty() {
        return Err(Error::Domain("empty ensemble".into()));
    }
    let stride = stride(ensemble.n(), n)?;
    let t = 1.0 / n as f64;
    let monte_carlo = [kernel_q.backend(), kernel_p.backend()].contains(&Backend::BridgeMc);
    let per_path: Vec<(f64, f64)> = ensemble
        .paths
        .par_iter()
        .enumerate()
        .map(|(i, path)| {
            let mut total = 0.0;
            let mut bias = 0.0;
            for k in 1..=n {
                let a = path.values[(k - 1) * stride];
                let b = path.values[k * stride];
                let key = (i * n + k) as u64;
                if monte_carlo {
                    let dq = kernel_q.density(t, a, b, key)?;
                    let dp = kernel_p.density(t, a, b, key)?;
                    for d in [&dq, &dp] {
                        if !(d.value > 0.0 && d.value.is_finite()) {
                            return Err(Error::Kernel(format!(
                                "{} density at (t={t}, x={a}, y={b}) is {}",
                                d.backend.label(),
                                d.value
                            )));
                        }
                        let rel = d.std_error / d.value;
                        bias += 0.5 * rel * rel;
                    }
                    total += dq.value.ln() - dp.value.ln();
                } else {
                    total += kernel_q.log_density(t, a, b, key)? - kernel_p.log_density(t, a, b, key)?;
                }
            }
            Ok((total / n as f64, bias / n as f64))
        })
        .collect::<Result<_>>()?;
    let values: Vec<f64> = per_path.iter().map(|v| v.0).collect();
    let mut est = EntropyEstimate::from_samples(&values, n, Method::DiscreteMc);
    if monte_carlo {
        let biases: Vec<f64> = per_path.iter().map(|v| v.1).collect();
        est.log_bias_bound = Some(MeanSe::from_samples(&biases).mean);
        est.n_inner = kernel_q.inner_samples().max(kernel_p.inner_samples());
    }
    Ok(est)
}

/// `(1/2n) ln(sigma(x_0) eta(x_n) / (sigma(x_n) eta(x_0)))` for observations
/// `x_0..x_n`.
pub fn boundary_term(obs: &[f64], ctx_q: &TransformContext, ctx_p: &TransformContext) -> f64 {
    let n = obs.len() - 1;
    let (x0, xn) = (obs[0], obs[n]);
    let r = (ctx_q.sigma(x0) * ctx_p.sigma(xn)) / (ctx_q.sigma(xn) * ctx_p.sigma(x0));
    r.ln() / (2 * n) as f64
}

/// The same quantity as [`boundary_term`] summed increment by increment,
/// before telescoping.
pub fn boundary_term_by_increments(obs: &[f64], ctx_q: &TransformContext, ctx_p: &TransformContext) -> f64 {
    let n = obs.len() - 1;
    let sum: f64 = obs
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            0.5 * ((ctx_q.sigma(a) * ctx_p.sigma(b)) / (ctx_q.sigma(b) * ctx_p.sigma(a))).ln()
        })
        .sum();
    sum / n as f64
}

/// Path part of the bracket, shared by the upper and lower functionals:
/// boundary term `- (1/n) Σ ln(sigma/eta)(x_k) - ½ Σ d_sigma^2 + ½ Σ d_eta^2`.
pub fn bracket_path_term(obs: &[f64], ctx_q: &TransformContext, ctx_p: &TransformContext) -> Result<f64> {
    let n = obs.len() - 1;
    let mut riemann = 0.0;
    let mut qv_q = 0.0;
    let mut qv_p = 0.0;
    for w in obs.windows(2) {
        let (a, b) = (w[0], w[1]);
        riemann += (ctx_q.sigma(b) / ctx_p.sigma(b)).ln();
        let dq = ctx_q.distance(a, b)?;
        let dp = ctx_p.distance(a, b)?;
        qv_q += dq * dq;
        qv_p += dp * dp;
    }
    Ok(boundary_term(obs, ctx_q, ctx_p) - riemann / n as f64 - 0.5 * qv_q + 0.5 * qv_p)
}

/// Deterministic offsets `(lower, upper)` of the bracket around the path
/// term at resolution `n`: the lower functional uses `-(C2_q + C1_p)/n`, the
/// upper `(C1_q + C2_p)/n`.
pub fn bracket_offsets(n: usize, cert_q: &RegularityCertificate, cert_p: &RegularityCertificate, set: ConstantSet) -> (f64, f64) {
    let (c1q, c2q) = cert_q.rates(set);
    let (c1p, c2p) = cert_p.rates(set);
    (-(c2q + c1p) / n as f64, (c1q + c2p) / n as f64)
}

pub fn proof_functional_bracket(
    n: usize,
    ensemble: &PathEnsemble,
    cert_q: &RegularityCertificate,
    cert_p: &RegularityCertificate,
    ctx_q: &TransformContext,
    ctx_p: &TransformContext,
) -> Result<(EntropyEstimate, EntropyEstimate)> {
    proof_functional_bracket_with(n, ensemble, cert_q, cert_p, ctx_q, ctx_p, ConstantSet::Stated)
}

pub fn proof_functional_bracket_with(
    n: usize,
    ensemble: &PathEnsemble,
    cert_q: &RegularityCertificate,
    cert_p: &RegularityCertificate,
    ctx_q: &TransformContext,
    ctx_p: &TransformContext,
    set: ConstantSet,
) -> Result<(EntropyEstimate, EntropyEstimate)> {
    if ensemble.is_empty() {
        return Err(Error::Domain("empty ensemble".into()));
    }
    let stride = stride(ensemble.n(), n)?;
    let terms: Vec<f64> = ensemble
        .paths
        .par_iter()
        .map(|p| {
            let obs: Vec<f64> = p.values.iter().step_by(stride).copied().collect();
            bracket_path_term(&obs, ctx_q, ctx_p)
        })
        .collect::<Result<_>>()?;
    let centre = MeanSe::from_samples(&terms);
    let (lo, hi) = bracket_offsets(n, cert_q, cert_p, set);
    let make = |offset: f64, method| EntropyEstimate {
        value: centre.mean + offset,
        std_error: centre.se,
        n,
        n_paths: terms.len(),
        method,
        n_inner: None,
        log_bias_bound: None,
    };
    Ok((make(lo, Method::BracketLower), make(hi, Method::BracketUpper)))
}

/// `E[Σ_k d_eta(M_{k-1}, M_k)^2]` at resolution `n`.
pub fn qv_riemann_sum(ensemble: &PathEnsemble, ctx_p: &TransformContext, n: usize) -> Result<ScalarEstimate> {
    let samples = qv_samples(ensemble, ctx_p, n)?;
    Ok(ScalarEstimate::from_samples(&samples, n))
}

fn qv_samples(ensemble: &PathEnsemble, ctx_p: &TransformContext, n: usize) -> Result<Vec<f64>> {
    if ensemble.is_empty() {
        return Err(Error::Domain("empty ensemble".into()));
    }
    let stride = stride(ensemble.n(), n)?;
    ensemble
        .paths
        .par_iter()
        .map(|p| {
            let mut s = 0.0;
            for k in 1..=n {
                let d = ctx_p.distance(p.values[(k - 1) * stride], p.values[k * stride])?;
                s += d * d;
            }
            Ok(s)
        })
        .collect()
}

/// Riemann sum against the time-quadrature estimate of
/// `E[∫_0^1 (sigma/eta)^2(M_s) ds]` on the same paths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QvComparison {
    pub riemann: ScalarEstimate,
    pub quadrature: ScalarEstimate,
    /// Paired difference `riemann - quadrature`, with its own standard error.
    pub difference: ScalarEstimate,
}

pub fn qv_comparison(
    ensemble: &PathEnsemble,
    ctx_q: &TransformContext,
    ctx_p: &TransformContext,
    n: usize,
) -> Result<QvComparison> {
    let riemann = qv_samples(ensemble, ctx_p, n)?;
    let (sq, sp) = (ctx_q.spec(), ctx_p.spec());
    let quad = if let (Some(a), Some(b)) = (sq.as_constant(), sp.as_constant()) {
        vec![(a / b) * (a / b); ensemble.len()]
    } else {
        ensemble.fine_integrals(ctx_q, |x| {
            let r = sq.value(x) / sp.value(x);
            r * r
        })?
    };
    let diff: Vec<f64> = riemann.iter().zip(&quad).map(|(a, b)| a - b).collect();
    Ok(QvComparison {
        riemann: ScalarEstimate::from_samples(&riemann, n),
        quadrature: ScalarEstimate::from_samples(&quad, n),
        difference: ScalarEstimate::from_samples(&diff, n),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub n: usize,
    pub discrete: EntropyEstimate,
    pub lower: EntropyEstimate,
    pub upper: EntropyEstimate,
    pub closed_form: EntropyEstimate,
}

impl ConvergenceRow {
    /// Whether `lower - z SE <= closed_form <= upper + z SE` with SEs
    /// combined in quadrature.
    pub fn bracket_contains_closed_form(&self, z: f64) -> bool {
        let cf = self.closed_form;
        let lo = self.lower.value - z * combine_se(self.lower.std_error, cf.std_error);
        let hi = self.upper.value + z * combine_se(self.upper.std_error, cf.std_error);
        lo <= cf.value && cf.value <= hi
    }
}

/// Inputs shared by every row of a convergence study.
pub struct StudySetup<'a> {
    pub ctx_q: &'a TransformContext,
    pub ctx_p: &'a TransformContext,
    pub cert_q: &'a RegularityCertificate,
    pub cert_p: &'a RegularityCertificate,
    pub kernel_q: &'a dyn TransitionKernel,
    pub kernel_p: &'a dyn TransitionKernel,
    pub constants: ConstantSet,
}

#[derive(Debug, Clone)]
pub struct ConvergenceStudy {
    pub rows: Vec<ConvergenceRow>,
    /// Failed study-level checks (empty when all pass).
    pub failures: Vec<String>,
}

/// One row per `n`. The factory is called once with the largest `n`; rows
/// whose `n` does not divide it get their own ensemble.
pub fn convergence_study<F>(n_list: &[usize], factory: F, setup: &StudySetup<'_>) -> Result<ConvergenceStudy>
where
    F: Fn(usize) -> Result<PathEnsemble>,
{
    if n_list.is_empty() || n_list.windows(2).any(|w| w[0] >= w[1]) || n_list[0] == 0 {
        return Err(Error::Domain(format!("n_list {n_list:?} must be positive and increasing")));
    }
    let n_max = *n_list.last().expect("nonempty");
    let shared = factory(n_max)?;
    let shared_cf = closed_form_functional(setup.ctx_q, setup.ctx_p, &shared)?;
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let own;
        let (ens, cf) = if n_max % n == 0 {
            (&shared, shared_cf)
        } else {
            own = factory(n)?;
            let cf = closed_form_functional(setup.ctx_q, setup.ctx_p, &own)?;
            (&own, cf)
        };
        let discrete = discrete_entropy_mc(n, ens, setup.kernel_q, setup.kernel_p)?;
        let (lower, upper) =
            proof_functional_bracket_with(n, ens, setup.cert_q, setup.cert_p, setup.ctx_q, setup.ctx_p, setup.constants)?;
        rows.push(ConvergenceRow {
            n,
            discrete,
            lower,
            upper,
            closed_form: cf,
        });
    }
    let mut failures = Vec::new();
    let last = rows.last().expect("nonempty");
    if !last.bracket_contains_closed_form(3.0) {
        failures.push(format!(
            "n={}: closed form {:.6} outside bracket [{:.6}, {:.6}] widened by 3 combined SE",
            last.n, last.closed_form.value, last.lower.value, last.upper.value
        ));
    }
    Ok(ConvergenceStudy { rows, failures })
}

/// CSV with columns `n, discrete, discrete_se, lower, upper, closed_form,
/// closed_form_se`.
pub fn write_convergence_csv<W: Write>(rows: &[ConvergenceRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["n", "discrete", "discrete_se", "lower", "upper", "closed_form", "closed_form_se"])?;
    for r in rows {
        out.write_record(&[
            r.n.to_string(),
            format!("{:?}", r.discrete.value),
            format!("{:?}", r.discrete.std_error),
            format!("{:?}", r.lower.value),
            format!("{:?}", r.upper.value),
            format!("{:?}", r.closed_form.value),
            format!("{:?}", r.closed_form.std_error),
        ])?;
    }
    out.flush()?;
    Ok(())
}
