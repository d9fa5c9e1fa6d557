//! Running averages of normalized log-likelihood ratios at fresh samples.
//!
//! For each resolution `k` an independent path of `Q` is drawn on the grid
//! `i / k` and
//! `Y_k = (1/k) Σ_i [ln q(1/k, M_{i-1}, M_i) - ln p(1/k, M_{i-1}, M_i)]`.
//! The running mean of `Y_1..Y_n` converges almost surely to the specific
//! relative entropy; [`ksslln_diagnostic`] estimates `Var(Y_k)` and the
//! partial sums `Σ Var(Y_k)/k^2` that control that convergence.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::{Backend, TransitionKernel};
use crate::lamperti::TransformContext;
use crate::paths::{simulate_diffusion, SamplePath};
use crate::rng::{self, Domain};
use crate::stats::{ols, MeanSe};

#[derive(Debug, Clone, PartialEq)]
pub struct SllnRun {
    pub n_max: usize,
    /// `per_k[k - 1] = Y_k`.
    pub per_k: Vec<f64>,
    /// `running_avg[n - 1]` is the mean of `Y_1..Y_n`.
    pub running_avg: Vec<f64>,
    pub master_seed: u64,
}

impl SllnRun {
    /// CSV with columns `k, Y_k, running_avg`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["k", "Y_k", "running_avg"])?;
        for (i, (y, a)) in self.per_k.iter().zip(&self.running_avg).enumerate() {
            out.write_record(&[(i + 1).to_string(), format!("{y:?}"), format!("{a:?}")])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Log-likelihood ratio of a path and the standard error of that log from
/// Monte Carlo kernel noise (zero for deterministic backends).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRatio {
    pub value: f64,
    pub log_se: f64,
}

/// `Σ_i ln q(1/k, x_{i-1}, x_i) - ln p(1/k, x_{i-1}, x_i)` over the path
/// observed at resolution `k`.
pub fn pathwise_log_ratio(
    k: usize,
    path: &SamplePath,
    kernel_q: &dyn TransitionKernel,
    kernel_p: &dyn TransitionKernel,
) -> Result<f64> {
    Ok(pathwise_log_ratio_detailed(k, path, kernel_q, kernel_p)?.value)
}

pub fn pathwise_log_ratio_detailed(
    k: usize,
    path: &SamplePath,
    kernel_q: &dyn TransitionKernel,
    kernel_p: &dyn TransitionKernel,
) -> Result<LogRatio> {
    let obs = path.observe(k)?;
    let t = 1.0 / k as f64;
    let monte_carlo = [kernel_q.backend(), kernel_p.backend()].contains(&Backend::BridgeMc);
    let mut value = 0.0;
    let mut var = 0.0;
    for (i, w) in obs.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        // Kernel keys tied to the path seed keep bridge samples fresh per path.
        let key = rng::derive_seed(path.seed, Domain::Kernel, i as u64);
        if monte_carlo {
            for (sign, kernel) in [(1.0, kernel_q), (-1.0, kernel_p)] {
                let d = kernel.density(t, a, b, key)?;
                if !(d.value > 0.0 && d.value.is_finite()) {
                    return Err(Error::Kernel(format!(
                        "{} density at (t={t}, x={a}, y={b}) is {}",
                        d.backend.label(),
                        d.value
                    )));
                }
                value += sign * d.value.ln();
                let rel = d.std_error / d.value;
                var += rel * rel;
            }
        } else {
            value += kernel_q.log_density(t, a, b, key)? - kernel_p.log_density(t, a, b, key)?;
        }
    }
    Ok(LogRatio {
        value,
        log_se: var.sqrt(),
    })
}

fn y_k(
    ctx_q: &TransformContext,
    start: f64,
    k: usize,
    substeps: usize,
    seed: u64,
    kernel_q: &dyn TransitionKernel,
    kernel_p: &dyn TransitionKernel,
) -> Result<f64> {
    let path = simulate_diffusion(ctx_q, start, k, substeps, seed)?;
    Ok(pathwise_log_ratio(k, &path, kernel_q, kernel_p)? / k as f64)
}

/// Seed of the fresh sample at resolution `k`.
pub fn slln_seed(master_seed: u64, k: usize) -> u64 {
    rng::derive_seed(master_seed, Domain::Slln, k as u64)
}

#[allow(clippy::too_many_arguments)]
pub fn slln_run(
    ctx_q: &TransformContext,
    start: f64,
    n_max: usize,
    substeps: usize,
    kernel_q: &dyn TransitionKernel,
    kernel_p: &dyn TransitionKernel,
    master_seed: u64,
) -> Result<SllnRun> {
    if n_max == 0 {
        return Err(Error::Domain("n_max must be at least 1".into()));
    }
    let per_k: Vec<f64> = (1..=n_max)
        .into_par_iter()
        .map(|k| y_k(ctx_q, start, k, substeps, slln_seed(master_seed, k), kernel_q, kernel_p))
        .collect::<Result<_>>()?;
    let mut sum = 0.0;
    let running_avg = per_k
        .iter()
        .enumerate()
        .map(|(i, y)| {
            sum += y;
            sum / (i + 1) as f64
        })
        .collect();
    Ok(SllnRun {
        n_max,
        per_k,
        running_avg,
        master_seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsllnRow {
    pub k: usize,
    pub mean: f64,
    pub variance: f64,
    /// `Σ Var(Y_j) / j^2` over the listed `j <= k`.
    pub partial_sum: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KsllnReport {
    pub rows: Vec<KsllnRow>,
    pub reps: usize,
    /// OLS slope of `ln Var(Y_k)` on `ln k` (NaN when any variance is zero).
    pub variance_exponent: f64,
    /// OLS slope of `ln S_j` on `ln j` for the partial sums `S_j` (NaN when
    /// any partial sum is zero). Values below one mean sublinear growth.
    pub partial_sum_exponent: f64,
}

impl KsllnReport {
    /// CSV with columns `k, mean, variance, partial_sum`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["k", "mean", "variance", "partial_sum"])?;
        for r in &self.rows {
            out.write_record(&[
                r.k.to_string(),
                format!("{:?}", r.mean),
                format!("{:?}", r.variance),
                format!("{:?}", r.partial_sum),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn log_slope(x: &[f64], y: &[f64]) -> f64 {
    if y.iter().any(|&v| !(v > 0.0)) {
        return f64::NAN;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    ols(&lx, &ly).0
}

/// Sample variance of `Y_k` over `reps` fresh samples for each `k`.
/// Sample `(k, r)` uses seed `derive_seed2(seed, Slln, k, r)`.
#[allow(clippy::too_many_arguments)]
pub fn ksslln_diagnostic(
    ctx_q: &TransformContext,
    start: f64,
    k_list: &[usize],
    reps: usize,
    substeps: usize,
    kernel_q: &dyn TransitionKernel,
    kernel_p: &dyn TransitionKernel,
    seed: u64,
) -> Result<KsllnReport> {
    if reps < 2 {
        return Err(Error::Domain(format!("need at least 2 reps per k, got {reps}")));
    }
    if k_list.is_empty() || k_list.contains(&0) {
        return Err(Error::Domain("k_list must be nonempty with positive entries".into()));
    }
    let jobs: Vec<(usize, usize)> = k_list.iter().flat_map(|&k| (0..reps).map(move |r| (k, r))).collect();
    let ys: Vec<f64> = jobs
        .par_iter()
        .map(|&(k, r)| {
            let s = rng::derive_seed2(seed, Domain::Slln, k as u64, r as u64);
            y_k(ctx_q, start, k, substeps, s, kernel_q, kernel_p)
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(k_list.len());
    let mut partial = 0.0;
    for (i, &k) in k_list.iter().enumerate() {
        let m = MeanSe::from_samples(&ys[i * reps..(i + 1) * reps]);
        let variance = m.variance();
        partial += variance / (k * k) as f64;
        rows.push(KsllnRow {
            k,
            mean: m.mean,
            variance,
            partial_sum: partial,
        });
    }
    let ks: Vec<f64> = rows.iter().map(|r| r.k as f64).collect();
    let vars: Vec<f64> = rows.iter().map(|r| r.variance).collect();
    let sums: Vec<f64> = rows.iter().map(|r| r.partial_sum).collect();
    Ok(KsllnReport {
        variance_exponent: log_slope(&ks, &vars),
        partial_sum_exponent: log_slope(&ks, &sums),
        rows,
        reps,
    })
}
