//! Specific relative entropy between laws of one-dimensional martingale
//! diffusions `dM = sigma(M) dB` and `dN = eta(N) dB` started at the same
//! point.
//!
//! The crate computes the closed-form functional
//! `½ E[∫_0^1 Γ(sigma(M_s)^2 / eta(M_s)^2) ds]` with `Γ(u) = u - 1 - ln u`,
//! estimates the grid relative entropies `H_n / n` it is the limit of,
//! brackets them with heat-kernel envelopes, and runs the strong-law
//! experiment over fresh samples at each resolution.
//!
//! | module | contents |
//! |--------|----------|
//! | [`coefficients`] | coefficient families, regularity certificates, `Γ` |
//! | [`lamperti`] | `g`, `g^{-1}`, drift `b`, geodesic distance |
//! | [`paths`] | Euler simulation in Lamperti coordinates, Brownian bridges |
//! | [`kernels`] | transition densities (exact, surrogate, bridge MC, PDE) and envelopes |
//! | [`entropy`] | closed form, discrete MC, proof-functional bracket, QV sums |
//! | [`slln`] | running averages of normalized log-likelihood ratios |
//! | [`config`], [`runner`] | experiment configuration and CSV artifacts |

pub mod coefficients;
pub mod config;
pub mod entropy;
pub mod error;
pub mod kernels;
pub mod lamperti;
pub mod paths;
pub mod quadrature;
pub mod rng;
pub mod runner;
pub mod slln;
pub mod stats;

pub use error::{Error, Result};
