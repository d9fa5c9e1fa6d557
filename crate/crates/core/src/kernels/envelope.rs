use std::f64::consts::PI;

use crate::coefficients::{ConstantSet, RegularityCertificate};
use crate::error::{Error, Result};
use crate::lamperti::TransformContext;

use super::log_surrogate;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvelopeSource {
    /// Surrogate times `[exp(-C2 t), exp(C1 t)]`.
    Lemma1,
    /// Gaussian bounds in `|x - y|` with rate `max(C1, C2)`.
    Lemma2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Envelope {
    pub lower: f64,
    pub upper: f64,
    /// `(C1, C2)` for the sharp envelope, `(C, C)` for the weak one.
    pub constants_used: (f64, f64),
    pub source: EnvelopeSource,
}

impl Envelope {
    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }

    /// Whether `v` lies inside the envelope widened by `slack` on each side.
    pub fn contains_with(&self, v: f64, slack: f64) -> bool {
        self.lower - slack <= v && v <= self.upper + slack
    }
}

fn check_unit_time(t: f64) -> Result<()> {
    if t > 0.0 && t <= 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("envelopes hold for t in (0, 1], got {t}")))
    }
}

pub fn lemma1_envelope(
    cert: &RegularityCertificate,
    ctx: &TransformContext,
    t: f64,
    x: f64,
    y: f64,
) -> Result<Envelope> {
    lemma1_envelope_with(cert, ConstantSet::Stated, ctx, t, x, y)
}

pub fn lemma1_envelope_with(
    cert: &RegularityCertificate,
    set: ConstantSet,
    ctx: &TransformContext,
    t: f64,
    x: f64,
    y: f64,
) -> Result<Envelope> {
    check_unit_time(t)?;
    let (c1, c2) = cert.rates(set);
    let ls = log_surrogate(ctx, t, x, y)?;
    Ok(Envelope {
        lower: (ls - c2 * t).exp(),
        upper: (ls + c1 * t).exp(),
        constants_used: (c1, c2),
        source: EnvelopeSource::Lemma1,
    })
}

pub fn lemma2_envelope(cert: &RegularityCertificate, t: f64, x: f64, y: f64) -> Result<Envelope> {
    lemma2_envelope_with(cert, ConstantSet::Stated, t, x, y)
}

pub fn lemma2_envelope_with(
    cert: &RegularityCertificate,
    set: ConstantSet,
    t: f64,
    x: f64,
    y: f64,
) -> Result<Envelope> {
    check_unit_time(t)?;
    let c = cert.c_max(set);
    let d2 = cert.delta * cert.delta;
    let dx2 = (x - y) * (x - y);
    let norm = -0.5 * (2.0 * PI * t).ln();
    let lower = (-c * t + d2.ln() + norm - dx2 / (2.0 * t * d2)).exp();
    let upper = (c * t - d2.ln() + norm - d2 * dx2 / (2.0 * t)).exp();
    Ok(Envelope {
        lower,
        upper,
        constants_used: (c, c),
        source: EnvelopeSource::Lemma2,
    })
}
