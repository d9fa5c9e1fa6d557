//! Transition density backends and the envelopes that bracket them.
//!
//! Four ways to get `p(t, x, y)` for `dM = sigma(M) dB`:
//!
//! * [`kernel_exact_constant`]: the Gaussian density, constant `sigma` only.
//! * [`kernel_surrogate`]: `(2 pi t)^{-1/2} sqrt(sigma(x)/sigma(y)) / sigma(y)
//!   exp(-d_sigma(x,y)^2 / 2t)`, the central factor of the envelopes.
//! * [`kernel_bridge_mc`]: surrogate times `E[exp(∫_0^t V(beta_s) ds)]` over
//!   Brownian bridges `beta` in Lamperti coordinates, with
//!   `V = -(b' + b^2)/2`. This representation is exact.
//! * [`fd::kernel_fd_oracle`]: Crank–Nicolson solution of the forward equation.

mod envelope;
pub mod fd;

pub use envelope::{lemma1_envelope, lemma1_envelope_with, lemma2_envelope, lemma2_envelope_with, Envelope, EnvelopeSource};
pub use fd::{kernel_fd_oracle, DensityTable, FdMesh};

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lamperti::TransformContext;
use crate::paths::fill_bridge;
use crate::quadrature::trapezoid;
use crate::rng::{self, Domain};
use crate::stats::MeanSe;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Exact,
    Surrogate,
    BridgeMc,
    FdPde,
}

impl Backend {
    pub fn label(self) -> &'static str {
        match self {
            Backend::Exact => "exact",
            Backend::Surrogate => "surrogate",
            Backend::BridgeMc => "bridge_mc",
            Backend::FdPde => "fd_pde",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityEstimate {
    pub value: f64,
    /// Monte Carlo standard error; zero for deterministic backends.
    pub std_error: f64,
    /// Discretization error estimate (PDE backend), zero otherwise.
    pub disc_error: f64,
    pub backend: Backend,
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

fn check_time(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("time {t} must be positive and finite")))
    }
}

/// A transition density usable by the entropy estimators. `key` selects the
/// random stream for Monte Carlo backends and is ignored otherwise.
pub trait TransitionKernel: Send + Sync {
    fn backend(&self) -> Backend;

    fn density(&self, t: f64, x: f64, y: f64, key: u64) -> Result<DensityEstimate>;

    /// Inner Monte Carlo sample count per evaluation, for stochastic backends.
    fn inner_samples(&self) -> Option<usize> {
        None
    }

    fn log_density(&self, t: f64, x: f64, y: f64, key: u64) -> Result<f64> {
        let d = self.density(t, x, y, key)?;
        if d.value > 0.0 && d.value.is_finite() {
            Ok(d.value.ln())
        } else {
            Err(Error::Kernel(format!(
                "{} density at (t={t}, x={x}, y={y}) is {}",
                self.backend().label(),
                d.value
            )))
        }
    }
}

/// Gaussian density of `x + c B_t` at `y`.
pub fn kernel_exact_constant(c: f64, t: f64, x: f64, y: f64) -> Result<DensityEstimate> {
    check_time(t)?;
    if !(c > 0.0) {
        return Err(Error::Domain(format!("constant coefficient {c} must be positive")));
    }
    Ok(DensityEstimate {
        value: log_gaussian(c, t, x, y).exp(),
        std_error: 0.0,
        disc_error: 0.0,
        backend: Backend::Exact,
        t,
        x,
        y,
    })
}

#[inline]
fn log_gaussian(c: f64, t: f64, x: f64, y: f64) -> f64 {
    let v = c * c * t;
    let d = y - x;
    -0.5 * (2.0 * PI * v).ln() - d * d / (2.0 * v)
}

#[derive(Debug, Clone, Copy)]
pub struct ExactConstantKernel {
    pub c: f64,
}

impl ExactConstantKernel {
    /// Only constant coefficients have an exact kernel.
    pub fn for_context(ctx: &TransformContext) -> Result<Self> {
        ctx.spec()
            .as_constant()
            .map(|c| Self { c })
            .ok_or_else(|| Error::Kernel(format!("no exact kernel for non-constant {}", ctx.spec().name())))
    }
}

impl TransitionKernel for ExactConstantKernel {
    fn backend(&self) -> Backend {
        Backend::Exact
    }

    fn density(&self, t: f64, x: f64, y: f64, _key: u64) -> Result<DensityEstimate> {
        kernel_exact_constant(self.c, t, x, y)
    }

    fn log_density(&self, t: f64, x: f64, y: f64, _key: u64) -> Result<f64> {
        check_time(t)?;
        Ok(log_gaussian(self.c, t, x, y))
    }
}

/// `ln` of the surrogate density.
pub fn log_surrogate(ctx: &TransformContext, t: f64, x: f64, y: f64) -> Result<f64> {
    check_time(t)?;
    let sx = ctx.sigma(x);
    let sy = ctx.sigma(y);
    let d = ctx.distance(x, y)?;
    Ok(-0.5 * (2.0 * PI * t).ln() + 0.5 * (sx / sy).ln() - sy.ln() - d * d / (2.0 * t))
}

pub fn kernel_surrogate(ctx: &TransformContext, t: f64, x: f64, y: f64) -> Result<DensityEstimate> {
    Ok(DensityEstimate {
        value: log_surrogate(ctx, t, x, y)?.exp(),
        std_error: 0.0,
        disc_error: 0.0,
        backend: Backend::Surrogate,
        t,
        x,
        y,
    })
}

#[derive(Debug, Clone)]
pub struct SurrogateKernel {
    pub ctx: TransformContext,
}

impl TransitionKernel for SurrogateKernel {
    fn backend(&self) -> Backend {
        Backend::Surrogate
    }

    fn density(&self, t: f64, x: f64, y: f64, _key: u64) -> Result<DensityEstimate> {
        kernel_surrogate(&self.ctx, t, x, y)
    }

    fn log_density(&self, t: f64, x: f64, y: f64, _key: u64) -> Result<f64> {
        log_surrogate(&self.ctx, t, x, y)
    }
}

/// Per-bridge values of `exp(∫_0^t V(beta_s) ds)` for bridges from `g(x)` to
/// `g(y)` (trapezoid rule over `m + 1` points).
pub fn bridge_functionals(
    ctx: &TransformContext,
    t: f64,
    x: f64,
    y: f64,
    m: usize,
    n_inner: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    check_time(t)?;
    if m == 0 || n_inner == 0 {
        return Err(Error::Domain(format!("bridge needs m >= 1 and n_inner >= 1 (m = {m}, n_inner = {n_inner})")));
    }
    if ctx.spec().as_constant().is_some() {
        return Ok(vec![1.0; n_inner]);
    }
    let zx = ctx.forward(x)?;
    let zy = ctx.forward(y)?;
    let mut rng = rng::stream(seed, 0);
    let mut beta = Vec::with_capacity(m + 1);
    let mut pot = Vec::with_capacity(m + 1);
    let mut out = Vec::with_capacity(n_inner);
    for _ in 0..n_inner {
        fill_bridge(&mut rng, t, zy - zx, m, &mut beta);
        pot.clear();
        let mut u = x;
        for (j, b) in beta.iter().enumerate() {
            u = if j == 0 {
                x
            } else if j == m {
                y
            } else {
                ctx.inverse_near(zx + b, u)?
            };
            pot.push(ctx.potential_at(u));
        }
        out.push(trapezoid(&pot, t).exp());
    }
    Ok(out)
}

/// Exact-representation Monte Carlo density: surrogate times the mean
/// bridge functional.
pub fn kernel_bridge_mc(
    ctx: &TransformContext,
    t: f64,
    x: f64,
    y: f64,
    m: usize,
    n_inner: usize,
    seed: u64,
) -> Result<DensityEstimate> {
    let sur = kernel_surrogate(ctx, t, x, y)?.value;
    let w = bridge_functionals(ctx, t, x, y, m, n_inner, seed)?;
    let stats = MeanSe::from_samples(&w);
    Ok(DensityEstimate {
        value: sur * stats.mean,
        std_error: sur * stats.se,
        disc_error: 0.0,
        backend: Backend::BridgeMc,
        t,
        x,
        y,
    })
}

#[derive(Debug, Clone)]
pub struct BridgeMcKernel {
    pub ctx: TransformContext,
    pub m: usize,
    pub n_inner: usize,
    pub seed: u64,
}

impl TransitionKernel for BridgeMcKernel {
    fn backend(&self) -> Backend {
        Backend::BridgeMc
    }

    fn density(&self, t: f64, x: f64, y: f64, key: u64) -> Result<DensityEstimate> {
        let seed = rng::derive_seed(self.seed, Domain::Bridge, key);
        kernel_bridge_mc(&self.ctx, t, x, y, self.m, self.n_inner, seed)
    }

    fn inner_samples(&self) -> Option<usize> {
        Some(self.n_inner)
    }
}

/// Kernel choice by name, bound to a transform context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelChoice {
    Exact,
    Surrogate,
    BridgeMc,
}

impl KernelChoice {
    pub fn label(self) -> &'static str {
        match self {
            KernelChoice::Exact => "exact",
            KernelChoice::Surrogate => "surrogate",
            KernelChoice::BridgeMc => "bridge_mc",
        }
    }
}

impl std::str::FromStr for KernelChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(KernelChoice::Exact),
            "surrogate" => Ok(KernelChoice::Surrogate),
            "bridge_mc" | "bridge-mc" => Ok(KernelChoice::BridgeMc),
            other => Err(Error::config("backend", format!("unknown kernel backend `{other}`"))),
        }
    }
}

/// Builds a boxed kernel. `m` and `n_inner` only matter for `BridgeMc`.
pub fn make_kernel(
    choice: KernelChoice,
    ctx: &TransformContext,
    m: usize,
    n_inner: usize,
    seed: u64,
) -> Result<Box<dyn TransitionKernel>> {
    Ok(match choice {
        KernelChoice::Exact => Box::new(ExactConstantKernel::for_context(ctx)?),
        KernelChoice::Surrogate => Box::new(SurrogateKernel { ctx: ctx.clone() }),
        KernelChoice::BridgeMc => Box::new(BridgeMcKernel {
            ctx: ctx.clone(),
            m,
            n_inner,
            seed,
        }),
    })
}
