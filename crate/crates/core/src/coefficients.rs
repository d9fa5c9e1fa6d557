//! Diffusion coefficients and their regularity certificates.
//!
//! A [`CoefficientSpec`] pairs an analytic coefficient family with declared
//! constants `delta` and `L`. The declared values are treated as ground truth;
//! [`validate_assumption`] only checks them on a finite grid and refuses specs
//! whose declared constants are visibly wrong. All bounds are strict.

use serde::{Deserialize, Serialize};

use crate::error::{Bound, Error, Result};

/// Analytic coefficient families with closed-form derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    /// `c`
    Constant { c: f64 },
    /// `a + b sin(omega x)`
    Sinusoidal { a: f64, b: f64, omega: f64 },
    /// `a + b tanh(x)`
    Tanh { a: f64, b: f64 },
}

impl Family {
    pub fn label(&self) -> &'static str {
        match self {
            Family::Constant { .. } => "constant",
            Family::Sinusoidal { .. } => "sinusoidal",
            Family::Tanh { .. } => "tanh",
        }
    }

    fn params(&self) -> Vec<f64> {
        match *self {
            Family::Constant { c } => vec![c],
            Family::Sinusoidal { a, b, omega } => vec![a, b, omega],
            Family::Tanh { a, b } => vec![a, b],
        }
    }
}

/// Derivative order for [`CoefficientSpec::eval`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Derivative {
    Value,
    First,
    Second,
}

impl TryFrom<u8> for Derivative {
    type Error = Error;

    fn try_from(order: u8) -> Result<Self> {
        match order {
            0 => Ok(Derivative::Value),
            1 => Ok(Derivative::First),
            2 => Ok(Derivative::Second),
            _ => Err(Error::Domain(format!("derivative order {order} not in {{0,1,2}}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSpec {
    family: Family,
    declared_delta: f64,
    declared_l: f64,
    name: String,
}

impl CoefficientSpec {
    /// Builds a spec. `declared_delta` must lie in `(0, 1]` and `declared_l`
    /// must be positive; whether the family respects them is checked by
    /// [`validate_assumption`].
    pub fn new(family: Family, declared_delta: f64, declared_l: f64) -> Result<Self> {
        if !(declared_delta > 0.0 && declared_delta <= 1.0) {
            return Err(Error::Domain(format!(
                "declared delta {declared_delta} not in (0, 1]"
            )));
        }
        if !(declared_l > 0.0 && declared_l.is_finite()) {
            return Err(Error::Domain(format!(
                "declared L {declared_l} must be positive and finite"
            )));
        }
        if family.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::Domain(format!(
                "{} family has non-finite parameters",
                family.label()
            )));
        }
        let name = match family {
            Family::Constant { c } => format!("const({c})"),
            Family::Sinusoidal { a, b, omega } => format!("{a}+{b}*sin({omega}x)"),
            Family::Tanh { a, b } => format!("{a}+{b}*tanh(x)"),
        };
        Ok(Self {
            family,
            declared_delta,
            declared_l,
            name,
        })
    }

    pub fn constant(c: f64, declared_delta: f64, declared_l: f64) -> Result<Self> {
        Self::new(Family::Constant { c }, declared_delta, declared_l)
    }

    pub fn sinusoidal(a: f64, b: f64, omega: f64, declared_delta: f64, declared_l: f64) -> Result<Self> {
        Self::new(Family::Sinusoidal { a, b, omega }, declared_delta, declared_l)
    }

    pub fn tanh(a: f64, b: f64, declared_delta: f64, declared_l: f64) -> Result<Self> {
        Self::new(Family::Tanh { a, b }, declared_delta, declared_l)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn declared_delta(&self) -> f64 {
        self.declared_delta
    }

    pub fn declared_l(&self) -> f64 {
        self.declared_l
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Constant value if the family is `Constant`.
    pub fn as_constant(&self) -> Option<f64> {
        match self.family {
            Family::Constant { c } => Some(c),
            _ => None,
        }
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        match self.family {
            Family::Constant { c } => c,
            Family::Sinusoidal { a, b, omega } => a + b * (omega * x).sin(),
            Family::Tanh { a, b } => a + b * x.tanh(),
        }
    }

    #[inline]
    pub fn first(&self, x: f64) -> f64 {
        match self.family {
            Family::Constant { .. } => 0.0,
            Family::Sinusoidal { b, omega, .. } => b * omega * (omega * x).cos(),
            Family::Tanh { b, .. } => {
                let th = x.tanh();
                b * (1.0 - th * th)
            }
        }
    }

    #[inline]
    pub fn second(&self, x: f64) -> f64 {
        match self.family {
            Family::Constant { .. } => 0.0,
            Family::Sinusoidal { b, omega, .. } => -b * omega * omega * (omega * x).sin(),
            Family::Tanh { b, .. } => {
                let th = x.tanh();
                -2.0 * b * th * (1.0 - th * th)
            }
        }
    }

    /// Value, first and second derivative in one call (shares the
    /// transcendental evaluations).
    #[inline]
    pub fn jet(&self, x: f64) -> (f64, f64, f64) {
        match self.family {
            Family::Constant { c } => (c, 0.0, 0.0),
            Family::Sinusoidal { a, b, omega } => {
                let (s, c) = (omega * x).sin_cos();
                (a + b * s, b * omega * c, -b * omega * omega * s)
            }
            Family::Tanh { a, b } => {
                let th = x.tanh();
                let sech2 = 1.0 - th * th;
                (a + b * th, b * sech2, -2.0 * b * th * sech2)
            }
        }
    }

    pub fn eval(&self, x: f64, order: Derivative) -> f64 {
        match order {
            Derivative::Value => self.value(x),
            Derivative::First => self.first(x),
            Derivative::Second => self.second(x),
        }
    }
}

/// Evaluates the requested derivative of a coefficient.
pub fn eval_coeff(spec: &CoefficientSpec, x: f64, order: Derivative) -> f64 {
    spec.eval(x, order)
}

/// Closed interval `[lo, hi]` with `lo < hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Domain(format!("degenerate interval [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }
}

/// Declared `(delta, L)` that passed the grid check, with the density
/// envelope constants derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularityCertificate {
    pub spec_name: String,
    pub delta: f64,
    pub l: f64,
    /// Upper-envelope rate `L / (4 delta)`.
    pub c1: f64,
    /// Lower-envelope rate `L delta / 4 + L^2 / 8`.
    pub c2: f64,
    pub checked_domain: Interval,
    pub grid_points: usize,
}

impl RegularityCertificate {
    pub fn from_constants(spec_name: impl Into<String>, delta: f64, l: f64, domain: Interval, grid_points: usize) -> Self {
        Self {
            spec_name: spec_name.into(),
            delta,
            l,
            c1: l / (4.0 * delta),
            c2: l * delta / 4.0 + l * l / 8.0,
            checked_domain: domain,
            grid_points,
        }
    }

    /// Lower-envelope rate obtained from the pointwise bound
    /// `-b' - b^2 >= -(L/(2 delta) + L^2/4)`, i.e. `L/(4 delta) + L^2/8`.
    ///
    /// The `c2` field uses `L delta / 4` in place of `L / (4 delta)`; since
    /// `sigma` may be as large as `1/delta`, the product `sigma sigma''` is only
    /// bounded below by `-L/delta`, and `c2` can be too small. See
    /// [`ConstantSet`].
    pub fn c2_corrected(&self) -> f64 {
        self.l / (4.0 * self.delta) + self.l * self.l / 8.0
    }

    /// `(c1, c2)` for the chosen constant set.
    pub fn rates(&self, set: ConstantSet) -> (f64, f64) {
        match set {
            ConstantSet::Stated => (self.c1, self.c2),
            ConstantSet::Corrected => (self.c1, self.c2_corrected()),
        }
    }

    /// Single rate for the weak (Lemma-2 style) envelope: `max(c1, c2)`.
    pub fn c_max(&self, set: ConstantSet) -> f64 {
        let (c1, c2) = self.rates(set);
        c1.max(c2)
    }
}

/// Which lower-envelope rate to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantSet {
    /// `C2 = L delta/4 + L^2/8`.
    #[default]
    Stated,
    /// `C2 = L/(4 delta) + L^2/8`.
    Corrected,
}

/// Checks the declared bounds of `spec` on `grid_points` equispaced points of
/// `domain` and returns the certificate.
pub fn validate_assumption(
    spec: &CoefficientSpec,
    domain: Interval,
    grid_points: usize,
) -> Result<RegularityCertificate> {
    if grid_points < 2 {
        return Err(Error::Domain(format!("grid_points = {grid_points} < 2")));
    }
    let delta = spec.declared_delta();
    let l = spec.declared_l();
    let step = (domain.hi - domain.lo) / (grid_points - 1) as f64;
    for i in 0..grid_points {
        let x = if i + 1 == grid_points {
            domain.hi
        } else {
            domain.lo + step * i as f64
        };
        let (v, d1, d2) = spec.jet(x);
        let violation = if !(v.is_finite() && d1.is_finite() && d2.is_finite()) {
            Some(Bound::NonFinite)
        } else if v <= delta {
            Some(Bound::Lower)
        } else if v >= 1.0 / delta {
            Some(Bound::Upper)
        } else if d1.abs() >= l {
            Some(Bound::FirstDerivative)
        } else if d2.abs() >= l {
            Some(Bound::SecondDerivative)
        } else {
            None
        };
        if let Some(which) = violation {
            return Err(Error::BoundViolation {
                spec: spec.name().to_string(),
                x,
                which,
            });
        }
    }
    Ok(RegularityCertificate::from_constants(
        spec.name(),
        delta,
        l,
        domain,
        grid_points,
    ))
}

/// `u - 1 - ln u`, the entropy integrand evaluated at `u = sigma^2 / eta^2`.
pub fn gamma(u: f64) -> Result<f64> {
    if !(u > 0.0) || !u.is_finite() {
        return Err(Error::Domain(format!("gamma requires 0 < u < inf, got {u}")));
    }
    Ok(gamma_unchecked(u))
}

#[inline]
pub(crate) fn gamma_unchecked(u: f64) -> f64 {
    let e = u - 1.0;
    e - e.ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sine() -> CoefficientSpec {
        CoefficientSpec::sinusoidal(2.0, 0.5, 1.0, 0.39, 0.51).unwrap()
    }

    #[test]
    fn certificate_for_unit_constant() {
        let spec = CoefficientSpec::constant(1.0, 0.9, 0.01).unwrap();
        let cert = validate_assumption(&spec, Interval::new(-10.0, 10.0).unwrap(), 1001).unwrap();
        assert!((cert.c1 - 0.0027777777777777779).abs() < 1e-15);
        assert!((cert.c2 - 0.0022625).abs() < 1e-15);
    }

    #[test]
    fn certificate_for_sine() {
        let cert = validate_assumption(&sine(), Interval::new(-10.0, 10.0).unwrap(), 1001).unwrap();
        assert!((cert.c1 - 0.3269230769230769).abs() < 1e-12);
        assert!((cert.c2 - 0.0822375).abs() < 1e-12);
        assert!((cert.c2_corrected() - (0.51 / 1.56 + 0.51 * 0.51 / 8.0)).abs() < 1e-15);
    }

    #[test]
    fn sine_with_large_delta_is_rejected() {
        let spec = CoefficientSpec::sinusoidal(2.0, 0.5, 1.0, 0.8, 0.51).unwrap();
        let err = validate_assumption(&spec, Interval::new(-10.0, 10.0).unwrap(), 1001).unwrap_err();
        match err {
            Error::BoundViolation { which, .. } => assert_eq!(which, Bound::Upper),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn strict_bounds_have_no_slack() {
        // sigma == 1 with delta == 1 sits exactly on both bounds.
        let spec = CoefficientSpec::constant(1.0, 1.0, 0.1).unwrap();
        assert!(validate_assumption(&spec, Interval::new(-1.0, 1.0).unwrap(), 3).is_err());
        // |sigma'| reaches 0.5 at x = 0, so L = 0.5 is not strict.
        let spec = CoefficientSpec::sinusoidal(2.0, 0.5, 1.0, 0.39, 0.5).unwrap();
        let err = validate_assumption(&spec, Interval::new(-1.0, 1.0).unwrap(), 3).unwrap_err();
        assert!(matches!(
            err,
            Error::BoundViolation {
                which: Bound::FirstDerivative,
                ..
            }
        ));
    }

    #[test]
    fn bad_declarations() {
        assert!(CoefficientSpec::constant(1.0, 0.0, 1.0).is_err());
        assert!(CoefficientSpec::constant(1.0, 1.5, 1.0).is_err());
        assert!(CoefficientSpec::constant(1.0, 0.5, -1.0).is_err());
        let spec = CoefficientSpec::constant(1.0, 0.5, 1.0).unwrap();
        assert!(validate_assumption(&spec, Interval { lo: 0.0, hi: 1.0 }, 1).is_err());
        assert!(Interval::new(1.0, 1.0).is_err());
    }

    #[test]
    fn tanh_family_certifies() {
        // sigma in (0.5, 1.5), |sigma'| <= 0.5, |sigma''| <= 0.5 * 4/(3 sqrt 3)
        let spec = CoefficientSpec::tanh(1.0, 0.5, 0.49, 0.51).unwrap();
        validate_assumption(&spec, Interval::new(-20.0, 20.0).unwrap(), 4001).unwrap();
    }

    #[test]
    fn eval_examples() {
        let two = CoefficientSpec::constant(2.0, 0.4, 0.1).unwrap();
        assert_eq!(eval_coeff(&two, 5.0, Derivative::Value), 2.0);
        assert_eq!(eval_coeff(&sine(), 0.0, Derivative::First), 0.5);
        let d2 = eval_coeff(&sine(), std::f64::consts::FRAC_PI_2, Derivative::Second);
        assert!((d2 + 0.5).abs() < 1e-15);
        assert!(Derivative::try_from(3).is_err());
    }

    #[test]
    fn jet_matches_components() {
        for spec in [sine(), CoefficientSpec::tanh(1.0, 0.5, 0.49, 0.51).unwrap()] {
            for i in -50..50 {
                let x = i as f64 * 0.37;
                let (v, d1, d2) = spec.jet(x);
                assert!((v - spec.value(x)).abs() < 1e-15);
                assert!((d1 - spec.first(x)).abs() < 1e-15);
                assert!((d2 - spec.second(x)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-5;
        for spec in [sine(), CoefficientSpec::tanh(1.0, 0.5, 0.49, 0.51).unwrap()] {
            for i in -20..20 {
                let x = i as f64 * 0.41;
                let fd1 = (spec.value(x + h) - spec.value(x - h)) / (2.0 * h);
                let fd2 = (spec.first(x + h) - spec.first(x - h)) / (2.0 * h);
                assert!((fd1 - spec.first(x)).abs() < 1e-9);
                assert!((fd2 - spec.second(x)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn gamma_examples() {
        assert_eq!(gamma(1.0).unwrap(), 0.0);
        assert!((gamma(4.0).unwrap() - (3.0 - 4f64.ln())).abs() < 1e-15);
        assert!((gamma(4.0).unwrap() - 1.6137056).abs() < 1e-7);
        assert!((gamma(0.25).unwrap() - 0.6362944).abs() < 1e-7);
        assert!(gamma(0.0).is_err());
        assert!(gamma(-1.0).is_err());
    }

    #[test]
    fn gamma_nonnegative_on_log_grid() {
        for i in 0..=600 {
            let u = 10f64.powf(-3.0 + i as f64 * 0.01);
            let g = gamma(u).unwrap();
            if i == 300 {
                assert_eq!(g, 0.0);
            } else {
                assert!(g > 0.0, "gamma({u}) = {g}");
            }
        }
    }

    proptest! {
        #[test]
        fn validate_is_monotone(dl in 0.0f64..2.0, shrink in 0.01f64..1.0) {
            let domain = Interval::new(-5.0, 5.0).unwrap();
            let base = sine();
            prop_assert!(validate_assumption(&base, domain, 201).is_ok());
            let looser = CoefficientSpec::sinusoidal(2.0, 0.5, 1.0, 0.39 * shrink, 0.51 + dl).unwrap();
            prop_assert!(validate_assumption(&looser, domain, 201).is_ok());
        }

        #[test]
        fn certificate_constants_exact(delta in 0.01f64..=1.0, l in 0.001f64..10.0) {
            let cert = RegularityCertificate::from_constants("x", delta, l, Interval::new(0.0, 1.0).unwrap(), 2);
            prop_assert_eq!(cert.c1, l / (4.0 * delta));
            prop_assert_eq!(cert.c2, l * delta / 4.0 + l * l / 8.0);
        }

        #[test]
        fn gamma_convex(u in 1e-3f64..1e3, v in 1e-3f64..1e3, lam in 0.0f64..1.0) {
            let m = lam * u + (1.0 - lam) * v;
            let lhs = gamma(m).unwrap();
            let rhs = lam * gamma(u).unwrap() + (1.0 - lam) * gamma(v).unwrap();
            prop_assert!(lhs <= rhs + 1e-9 * (1.0 + rhs.abs()));
        }
    }
}
