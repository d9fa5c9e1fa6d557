//! Path simulation in Lamperti coordinates, iid ensembles, and exact
//! Brownian bridges.
//!
//! A path is simulated as `Y = g(M)` with Euler–Maruyama,
//! `Y <- Y + b(Y) dt + dW`, and mapped back through `g^{-1}` after every
//! substep. Within each observation cell the Brownian increments are built
//! by dyadic midpoint refinement (Lévy construction) when `substeps` is a
//! power of two: the first `2^j` normals of a cell fix the path on the
//! `2^j`-point sub-grid, so refining `substeps` keeps the same Brownian path.

use std::io::{Read, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lamperti::TransformContext;
use crate::quadrature::trapezoid;
use crate::rng::{self, Domain};

#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    pub start: f64,
    pub n: usize,
    pub values: Vec<f64>,
    pub seed: u64,
    pub substeps: usize,
}

impl SamplePath {
    /// Values on the coarser grid `k / m`, `m` dividing `n`.
    pub fn observe(&self, m: usize) -> Result<Vec<f64>> {
        let stride = stride(self.n, m)?;
        Ok(self.values.iter().step_by(stride).copied().collect())
    }

    /// Re-simulates the path and returns every substep value
    /// (`n * substeps + 1` points).
    pub fn replay_fine(&self, ctx: &TransformContext) -> Result<Vec<f64>> {
        let mut fine = Vec::with_capacity(self.n * self.substeps + 1);
        let coarse = simulate_visit(ctx, self.start, self.n, self.substeps, self.seed, |_, x| fine.push(x))?;
        if coarse != self.values {
            return Err(Error::Domain(
                "replay does not reproduce the stored path; wrong transform context?".into(),
            ));
        }
        Ok(fine)
    }
}

pub(crate) fn stride(n: usize, m: usize) -> Result<usize> {
    if m == 0 || n % m != 0 {
        return Err(Error::Domain(format!(
            "resolution {m} does not divide path resolution {n}"
        )));
    }
    Ok(n / m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub paths: Vec<SamplePath>,
    pub master_seed: u64,
}

impl PathEnsemble {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Grid resolution shared by all paths.
    pub fn n(&self) -> usize {
        self.paths.first().map_or(0, |p| p.n)
    }

    pub fn start(&self) -> f64 {
        self.paths.first().map_or(f64::NAN, |p| p.start)
    }

    /// Per-path trapezoid integral over `[0, 1]` of `f` along the fine
    /// substep grid, by deterministic replay of each path.
    pub fn fine_integrals<F>(&self, ctx: &TransformContext, f: F) -> Result<Vec<f64>>
    where
        F: Fn(f64) -> f64 + Sync,
    {
        self.paths
            .par_iter()
            .map(|p| {
                let mut samples = Vec::with_capacity(p.n * p.substeps + 1);
                let coarse = simulate_visit(ctx, p.start, p.n, p.substeps, p.seed, |_, x| samples.push(f(x)))?;
                if coarse != p.values {
                    return Err(Error::Domain(
                        "replay does not reproduce the stored path; wrong transform context?".into(),
                    ));
                }
                Ok(trapezoid(&samples, 1.0))
            })
            .collect()
    }

    /// Writes `path_id,k,value` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["path_id", "k", "value"])?;
        for (id, p) in self.paths.iter().enumerate() {
            for (k, v) in p.values.iter().enumerate() {
                out.write_record(&[id.to_string(), k.to_string(), format!("{v:?}")])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Reads the CSV written by [`PathEnsemble::write_csv`]. Seeds are
    /// re-derived from `master_seed`, so replay works only if the file came
    /// from the same master seed and `substeps`.
    pub fn read_csv<R: Read>(r: R, master_seed: u64, substeps: usize) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let parse = |i: usize| -> Result<&str> {
                rec.get(i)
                    .ok_or_else(|| Error::Domain(format!("short CSV row {rec:?}")))
            };
            let id: usize = parse(0)?.parse().map_err(|e| Error::Domain(format!("path_id: {e}")))?;
            let k: usize = parse(1)?.parse().map_err(|e| Error::Domain(format!("k: {e}")))?;
            let v: f64 = parse(2)?.parse().map_err(|e| Error::Domain(format!("value: {e}")))?;
            if id == rows.len() {
                rows.push(Vec::new());
            }
            let row = rows
                .get_mut(id)
                .ok_or_else(|| Error::Domain(format!("path_id {id} out of order")))?;
            if k != row.len() {
                return Err(Error::Domain(format!("path {id}: k = {k} out of order")));
            }
            row.push(v);
        }
        let n = rows.first().map_or(0, |r| r.len().saturating_sub(1));
        let mut paths = Vec::with_capacity(rows.len());
        for (id, values) in rows.into_iter().enumerate() {
            if values.len() != n + 1 || n == 0 {
                return Err(Error::Domain(format!("path {id} has {} values", values.len())));
            }
            paths.push(SamplePath {
                start: values[0],
                n,
                values,
                seed: rng::derive_seed(master_seed, Domain::Path, id as u64),
                substeps,
            });
        }
        Ok(Self { paths, master_seed })
    }
}

/// Fills `dw` (length `substeps`) with the Brownian increments of one cell
/// of duration `cell`.
fn cell_increments(rng: &mut ChaCha8Rng, cell: f64, dw: &mut [f64], w: &mut Vec<f64>) {
    let s = dw.len();
    if s.is_power_of_two() {
        w.clear();
        w.resize(s + 1, 0.0);
        let z: f64 = rng.sample(StandardNormal);
        w[s] = cell.sqrt() * z;
        let dt = cell / s as f64;
        let mut half = s / 2;
        while half >= 1 {
            let sd = (half as f64 * dt / 2.0).sqrt();
            let mut m = half;
            while m < s {
                let z: f64 = rng.sample(StandardNormal);
                w[m] = 0.5 * (w[m - half] + w[m + half]) + sd * z;
                m += 2 * half;
            }
            half /= 2;
        }
        for j in 0..s {
            dw[j] = w[j + 1] - w[j];
        }
    } else {
        let sd = (cell / s as f64).sqrt();
        for d in dw.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *d = sd * z;
        }
    }
}

/// Core simulator: calls `visit(j, x_j)` for every substep index
/// `j = 0..=n*substeps` and returns the values on the observation grid.
pub(crate) fn simulate_visit<V: FnMut(usize, f64)>(
    ctx: &TransformContext,
    start: f64,
    n: usize,
    substeps: usize,
    seed: u64,
    mut visit: V,
) -> Result<Vec<f64>> {
    if n == 0 || substeps == 0 {
        return Err(Error::Domain(format!(
            "n = {n} and substeps = {substeps} must be positive"
        )));
    }
    let spec = ctx.spec();
    let cell = 1.0 / n as f64;
    let dt = cell / substeps as f64;
    let mut values = Vec::with_capacity(n + 1);
    values.push(start);
    visit(0, start);
    let mut x = start;
    let mut y = ctx.forward(start)?;
    let mut dw = vec![0.0; substeps];
    let mut scratch = Vec::with_capacity(substeps + 1);
    let constant = spec.as_constant().is_some();
    let mut rng = rng::stream(seed, 0);
    for k in 0..n {
        rng.set_stream(k as u64);
        rng.set_word_pos(0);
        cell_increments(&mut rng, cell, &mut dw, &mut scratch);
        for (j, d) in dw.iter().enumerate() {
            if constant {
                y += d;
                x = ctx.inverse(y)?;
            } else {
                let (s, s1, _) = spec.jet(x);
                let dy = -0.5 * s1 * dt + d;
                y += dy;
                x = ctx.inverse_near(y, x + s * dy)?;
            }
            visit(k * substeps + j + 1, x);
        }
        values.push(x);
    }
    Ok(values)
}

pub fn simulate_diffusion(
    ctx: &TransformContext,
    start: f64,
    n: usize,
    substeps: usize,
    seed: u64,
) -> Result<SamplePath> {
    let values = simulate_visit(ctx, start, n, substeps, seed, |_, _| {})?;
    Ok(SamplePath {
        start,
        n,
        values,
        seed,
        substeps,
    })
}

pub fn simulate_ensemble(
    ctx: &TransformContext,
    start: f64,
    n: usize,
    substeps: usize,
    count: usize,
    master_seed: u64,
) -> Result<PathEnsemble> {
    if count == 0 {
        return Err(Error::Domain("ensemble count must be at least 1".into()));
    }
    let paths = (0..count)
        .into_par_iter()
        .map(|i| {
            let seed = rng::derive_seed(master_seed, Domain::Path, i as u64);
            simulate_diffusion(ctx, start, n, substeps, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PathEnsemble { paths, master_seed })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BridgePath {
    pub t: f64,
    pub endpoint: f64,
    pub m: usize,
    pub values: Vec<f64>,
}

/// Exact Brownian bridge from 0 to `endpoint` on `[0, t]` at `m + 1`
/// equispaced times, written into `out`.
pub(crate) fn fill_bridge<R: Rng>(rng: &mut R, t: f64, endpoint: f64, m: usize, out: &mut Vec<f64>) {
    out.clear();
    out.push(0.0);
    let step = t / m as f64;
    let mut b = 0.0;
    for j in 1..m {
        let remaining = t - (j - 1) as f64 * step;
        let mean = b + (endpoint - b) * step / remaining;
        let var = step * (remaining - step) / remaining;
        let z: f64 = rng.sample(StandardNormal);
        b = mean + var.max(0.0).sqrt() * z;
        out.push(b);
    }
    out.push(endpoint);
}

pub fn brownian_bridge(t: f64, endpoint: f64, m: usize, seed: u64) -> Result<BridgePath> {
    if !(t > 0.0) || m == 0 {
        return Err(Error::Domain(format!("bridge needs t > 0 and m >= 1 (t = {t}, m = {m})")));
    }
    let mut rng = rng::stream(seed, 0);
    let mut values = Vec::with_capacity(m + 1);
    fill_bridge(&mut rng, t, endpoint, m, &mut values);
    Ok(BridgePath {
        t,
        endpoint,
        m,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::CoefficientSpec;
    use crate::stats::{correlation, MeanSe};

    fn ctx_const(c: f64) -> TransformContext {
        TransformContext::new(CoefficientSpec::constant(c, 0.4, 0.1).unwrap(), 0.0).unwrap()
    }

    fn ctx_sine() -> TransformContext {
        TransformContext::new(CoefficientSpec::sinusoidal(2.0, 0.5, 1.0, 0.39, 0.51).unwrap(), 0.0).unwrap()
    }

    fn increments(e: &PathEnsemble) -> Vec<f64> {
        e.paths
            .iter()
            .flat_map(|p| p.values.windows(2).map(|w| w[1] - w[0]).collect::<Vec<_>>())
            .collect()
    }

    /// Moments of N(0, v): mean 0, variance v, kurtosis 3.
    fn assert_gaussian(xs: &[f64], v: f64) {
        let m = MeanSe::from_samples(xs);
        assert!(m.mean.abs() < 4.0 * m.se, "mean {} se {}", m.mean, m.se);
        let n = xs.len() as f64;
        let var = m.variance();
        let var_se = v * (2.0 / n).sqrt();
        assert!((var - v).abs() < 4.0 * var_se, "var {var} vs {v}");
        let k4 = xs.iter().map(|x| x.powi(4)).sum::<f64>() / n / (v * v);
        assert!((k4 - 3.0).abs() < 4.0 * (96.0 / n).sqrt(), "kurtosis {k4}");
    }

    #[test]
    fn unit_constant_gives_brownian_increments() {
        let e = simulate_ensemble(&ctx_const(1.0), 0.0, 16, 8, 4000, 1).unwrap();
        assert!(e.paths.iter().all(|p| p.values[0] == 0.0 && p.values.len() == 17));
        assert_gaussian(&increments(&e), 1.0 / 16.0);
    }

    #[test]
    fn scaled_constant_increments() {
        let e = simulate_ensemble(&ctx_const(2.0), 0.0, 16, 3, 4000, 2).unwrap();
        assert_gaussian(&increments(&e), 4.0 / 16.0);
    }

    #[test]
    fn sine_martingale() {
        let e = simulate_ensemble(&ctx_sine(), 0.0, 64, 32, 20_000, 3).unwrap();
        let ends: Vec<f64> = e.paths.iter().map(|p| p.values[64]).collect();
        let m = MeanSe::from_samples(&ends);
        assert!(m.mean.abs() <= 3.0 * m.se, "{m:?}");
    }

    #[test]
    fn singleton_ensemble_matches_direct() {
        let ctx = ctx_sine();
        let e = simulate_ensemble(&ctx, 0.5, 8, 4, 1, 99).unwrap();
        let p = simulate_diffusion(&ctx, 0.5, 8, 4, rng::derive_seed(99, Domain::Path, 0)).unwrap();
        assert_eq!(e.paths[0], p);
    }

    #[test]
    fn ensembles_are_deterministic() {
        let ctx = ctx_sine();
        let a = simulate_ensemble(&ctx, 0.0, 8, 4, 200, 5).unwrap();
        let b = simulate_ensemble(&ctx, 0.0, 8, 4, 200, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn neighbouring_master_seeds_are_uncorrelated() {
        let ctx = ctx_const(1.0);
        let a = simulate_ensemble(&ctx, 0.0, 4, 1, 10_000, 10).unwrap();
        let b = simulate_ensemble(&ctx, 0.0, 4, 1, 10_000, 11).unwrap();
        let ea: Vec<f64> = a.paths.iter().map(|p| p.values[4]).collect();
        let eb: Vec<f64> = b.paths.iter().map(|p| p.values[4]).collect();
        assert!(correlation(&ea, &eb).abs() < 0.02);
    }

    #[test]
    fn refinement_keeps_brownian_path() {
        // With a constant coefficient the observed values depend only on
        // the Brownian path at the cell endpoints.
        let ctx = ctx_const(1.0);
        let a = simulate_diffusion(&ctx, 0.0, 4, 2, 17).unwrap();
        let b = simulate_diffusion(&ctx, 0.0, 4, 64, 17).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn replay_reproduces_coarse_values() {
        let ctx = ctx_sine();
        let p = simulate_diffusion(&ctx, 0.0, 8, 16, 4).unwrap();
        let fine = p.replay_fine(&ctx).unwrap();
        assert_eq!(fine.len(), 8 * 16 + 1);
        for k in 0..=8 {
            assert_eq!(fine[k * 16], p.values[k]);
        }
        let other = ctx_const(1.0);
        assert!(p.replay_fine(&other).is_err());
    }

    #[test]
    fn observe_subsamples() {
        let p = simulate_diffusion(&ctx_sine(), 0.0, 8, 2, 4).unwrap();
        let v = p.observe(2).unwrap();
        assert_eq!(v, vec![p.values[0], p.values[4], p.values[8]]);
        assert!(p.observe(3).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let ctx = ctx_sine();
        let e = simulate_ensemble(&ctx, 0.0, 4, 2, 5, 8).unwrap();
        let mut buf = Vec::new();
        e.write_csv(&mut buf).unwrap();
        let back = PathEnsemble::read_csv(buf.as_slice(), 8, 2).unwrap();
        assert_eq!(back, e);
    }

    #[test]
    fn bridge_endpoints() {
        let b = brownian_bridge(0.7, 0.0, 10, 1).unwrap();
        assert_eq!(b.values[0], 0.0);
        assert_eq!(b.values[10], 0.0);
        let b = brownian_bridge(1.0, 1.3, 1, 1).unwrap();
        assert_eq!(b.values, vec![0.0, 1.3]);
        assert!(brownian_bridge(0.0, 1.0, 4, 1).is_err());
        assert!(brownian_bridge(1.0, 1.0, 0, 1).is_err());
    }

    #[test]
    fn bridge_marginals() {
        let draws = 100_000;
        let mut mid = Vec::with_capacity(draws);
        let mut quarter = Vec::with_capacity(draws);
        let mut rng_ = rng::stream(123, 0);
        let mut buf = Vec::new();
        for _ in 0..draws {
            fill_bridge(&mut rng_, 2.0, 0.0, 8, &mut buf);
            mid.push(buf[4]);
        }
        for _ in 0..draws {
            fill_bridge(&mut rng_, 1.0, 1.0, 8, &mut buf);
            quarter.push(buf[2]);
        }
        // Variance at s = t/2 is t/4 = 0.5; SE of a sample variance is v sqrt(2/n).
        let v = MeanSe::from_samples(&mid).variance();
        assert!((v - 0.5).abs() < 3.0 * 0.5 * (2.0 / draws as f64).sqrt(), "{v}");
        let m = MeanSe::from_samples(&quarter);
        assert!((m.mean - 0.25).abs() < 3.0 * m.se, "{m:?}");
        // variance s(t-s)/t = 0.1875
        assert!((m.variance() - 0.1875).abs() < 3.0 * 0.1875 * (2.0 / draws as f64).sqrt());
    }
}
