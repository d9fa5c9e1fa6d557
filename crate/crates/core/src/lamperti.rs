//! The space change `g(y) = ∫_{base}^{y} du / sigma(u)`, its inverse, the
//! drift `b = -sigma'/2 ∘ g^{-1}` of the transformed process, and the
//! geodesic distance `d_sigma`.
//!
//! `g` is tabulated once per context on a uniform grid around the base point
//! (cell integrals by 5-point Gauss–Legendre, cubic Hermite interpolation with
//! the exact slope `1/sigma`). Queries outside the table fall back to adaptive
//! quadrature from the nearest table edge. The table is immutable, so a
//! context can be shared freely across threads.

use std::sync::Arc;

use crate::coefficients::CoefficientSpec;
use crate::error::{Error, Result};
use crate::quadrature::{self, GL5};

pub const DEFAULT_QUAD_TOL: f64 = 1e-10;
pub const DEFAULT_ROOT_TOL: f64 = 1e-12;

/// Half-width (in the original coordinate) of the tabulated region.
const TABLE_HALF_WIDTH: f64 = 32.0;
const MAX_ROOT_ITER: usize = 200;

#[derive(Debug)]
enum Repr {
    /// `sigma == c`: `g(y) = (y - base) / c`.
    Linear { c: f64 },
    Table(Table),
}

#[derive(Debug)]
struct Table {
    lo: f64,
    base: f64,
    /// Index of the node at `base`.
    half: usize,
    step: f64,
    /// `g` at `base + (i - half) step`.
    g: Vec<f64>,
    /// `1 / sigma` at the same nodes.
    slope: Vec<f64>,
}

impl Table {
    fn build(spec: &CoefficientSpec, base: f64) -> Self {
        let step = (2f64).powi(-9) / spec.declared_l().max(1.0);
        let half_cells = (TABLE_HALF_WIDTH / step).ceil() as usize;
        let n = 2 * half_cells + 1;
        let lo = base - half_cells as f64 * step;
        let node = |i: usize| base + (i as f64 - half_cells as f64) * step;
        let cell = |a: f64, b: f64| {
            let c = 0.5 * (a + b);
            let h = 0.5 * (b - a);
            h * GL5
                .iter()
                .map(|(x, w)| w / spec.value(c + h * x))
                .sum::<f64>()
        };
        let mut g = vec![0.0; n];
        for i in half_cells + 1..n {
            g[i] = g[i - 1] + cell(node(i - 1), node(i));
        }
        for i in (0..half_cells).rev() {
            g[i] = g[i + 1] - cell(node(i), node(i + 1));
        }
        let slope = (0..n).map(|i| 1.0 / spec.value(node(i))).collect();
        Table {
            lo,
            base,
            half: half_cells,
            step,
            g,
            slope,
        }
    }

    fn hi(&self) -> f64 {
        self.base + self.half as f64 * self.step
    }

    #[inline]
    fn contains(&self, y: f64) -> bool {
        y >= self.lo && y <= self.hi()
    }

    #[inline]
    fn cell_eval(&self, i: usize, y: f64) -> f64 {
        let s = (y - self.base) / self.step - (i as f64 - self.half as f64);
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.g[i]
            + h10 * self.step * self.slope[i]
            + h01 * self.g[i + 1]
            + h11 * self.step * self.slope[i + 1]
    }

    #[inline]
    fn eval(&self, y: f64) -> f64 {
        let pos = (y - self.base) / self.step + self.half as f64;
        let i = (pos.floor().max(0.0) as usize).min(self.g.len() - 2);
        self.cell_eval(i, y)
    }
}

/// Everything needed to move between the original coordinate and the
/// unit-diffusion coordinate for one coefficient.
#[derive(Debug, Clone)]
pub struct TransformContext {
    spec: CoefficientSpec,
    base_point: f64,
    quad_tol: f64,
    root_tol: f64,
    repr: Arc<Repr>,
}

impl TransformContext {
    pub fn new(spec: CoefficientSpec, base_point: f64) -> Result<Self> {
        Self::with_tolerances(spec, base_point, DEFAULT_QUAD_TOL, DEFAULT_ROOT_TOL)
    }

    pub fn with_tolerances(
        spec: CoefficientSpec,
        base_point: f64,
        quad_tol: f64,
        root_tol: f64,
    ) -> Result<Self> {
        if !base_point.is_finite() {
            return Err(Error::Domain(format!("base point {base_point} not finite")));
        }
        if !(quad_tol > 0.0 && root_tol > 0.0) {
            return Err(Error::Domain("tolerances must be positive".into()));
        }
        let repr = match spec.as_constant() {
            Some(c) if c > 0.0 => Repr::Linear { c },
            Some(c) => return Err(Error::Domain(format!("constant coefficient {c} not positive"))),
            None => Repr::Table(Table::build(&spec, base_point)),
        };
        Ok(Self {
            spec,
            base_point,
            quad_tol,
            root_tol,
            repr: Arc::new(repr),
        })
    }

    pub fn spec(&self) -> &CoefficientSpec {
        &self.spec
    }

    pub fn base_point(&self) -> f64 {
        self.base_point
    }

    pub fn quad_tol(&self) -> f64 {
        self.quad_tol
    }

    pub fn root_tol(&self) -> f64 {
        self.root_tol
    }

    #[inline]
    pub fn sigma(&self, x: f64) -> f64 {
        self.spec.value(x)
    }

    /// `g(y)`.
    #[inline]
    pub fn forward(&self, y: f64) -> Result<f64> {
        match &*self.repr {
            Repr::Linear { c } => Ok((y - self.base_point) / c),
            Repr::Table(t) => {
                if t.contains(y) {
                    Ok(t.eval(y))
                } else if y > t.hi() {
                    Ok(t.g[t.g.len() - 1] + self.integral(t.hi(), y)?)
                } else {
                    Ok(t.g[0] - self.integral(y, t.lo)?)
                }
            }
        }
    }

    /// `g(y)` by adaptive quadrature from the base point, bypassing the table.
    pub fn forward_exact(&self, y: f64) -> Result<f64> {
        self.integral(self.base_point, y)
    }

    fn integral(&self, a: f64, b: f64) -> Result<f64> {
        let spec = &self.spec;
        quadrature::integrate(|u| 1.0 / spec.value(u), a, b, self.quad_tol)
    }

    /// `g^{-1}(z)`.
    pub fn inverse(&self, z: f64) -> Result<f64> {
        match &*self.repr {
            Repr::Linear { c } => Ok(self.base_point + c * z),
            Repr::Table(t) => {
                let n = t.g.len();
                if z >= t.g[0] && z <= t.g[n - 1] {
                    let i = t.g.partition_point(|&v| v <= z).clamp(1, n - 1) - 1;
                    if z == 0.0 {
                        return Ok(self.base_point);
                    }
                    let lo = t.base + (i as f64 - t.half as f64) * t.step;
                    let hi = lo + t.step;
                    self.newton(z, lo, hi, |y| t.cell_eval(i, y))
                } else {
                    // Lipschitz bracket: delta |y - base| <= |g(y)| <= |y - base| / delta.
                    let d = self.spec.declared_delta();
                    let (lo, hi) = if z >= 0.0 {
                        (self.base_point + z * d, self.base_point + z / d)
                    } else {
                        (self.base_point + z / d, self.base_point + z * d)
                    };
                    self.newton_fallible(z, lo, hi)
                }
            }
        }
    }

    /// `g^{-1}(z)` starting Newton from `guess`; used along simulated paths
    /// where the previous state is an excellent starting point.
    #[inline]
    pub fn inverse_near(&self, z: f64, guess: f64) -> Result<f64> {
        match &*self.repr {
            Repr::Linear { c } => Ok(self.base_point + c * z),
            Repr::Table(t) => {
                let mut y = guess;
                for _ in 0..8 {
                    if !t.contains(y) {
                        break;
                    }
                    let r = t.eval(y) - z;
                    if r.abs() <= self.root_tol {
                        return Ok(y);
                    }
                    y -= r * self.spec.value(y);
                }
                self.inverse(z)
            }
        }
    }

    /// Safeguarded Newton on an infallible monotone function.
    fn newton<F: Fn(f64) -> f64>(&self, z: f64, mut lo: f64, mut hi: f64, g: F) -> Result<f64> {
        let mut y = 0.5 * (lo + hi);
        let mut r = g(y) - z;
        for _ in 0..MAX_ROOT_ITER {
            if r.abs() <= self.root_tol {
                return Ok(y);
            }
            if r > 0.0 {
                hi = y;
            } else {
                lo = y;
            }
            let mut next = y - r * self.spec.value(y);
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if next == y || hi - lo <= 4.0 * f64::EPSILON * y.abs().max(1.0) {
                return Ok(y);
            }
            y = next;
            r = g(y) - z;
        }
        Err(Error::RootFailure {
            target: z,
            residual: r,
            iterations: MAX_ROOT_ITER,
        })
    }

    fn newton_fallible(&self, z: f64, mut lo: f64, mut hi: f64) -> Result<f64> {
        let mut y = 0.5 * (lo + hi);
        let mut r = self.forward(y)? - z;
        for _ in 0..MAX_ROOT_ITER {
            if r.abs() <= self.root_tol {
                return Ok(y);
            }
            if r > 0.0 {
                hi = y;
            } else {
                lo = y;
            }
            let mut next = y - r * self.spec.value(y);
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if next == y || hi - lo <= 4.0 * f64::EPSILON * y.abs().max(1.0) {
                return Ok(y);
            }
            y = next;
            r = self.forward(y)? - z;
        }
        Err(Error::RootFailure {
            target: z,
            residual: r,
            iterations: MAX_ROOT_ITER,
        })
    }

    /// `b(z) = -sigma'(g^{-1}(z)) / 2`.
    pub fn drift(&self, z: f64) -> Result<f64> {
        let x = self.inverse(z)?;
        Ok(-0.5 * self.spec.first(x))
    }

    /// `b'(z) = -sigma''(x) sigma(x) / 2` with `x = g^{-1}(z)`.
    pub fn drift_derivative(&self, z: f64) -> Result<f64> {
        let x = self.inverse(z)?;
        let (s, _, s2) = self.spec.jet(x);
        Ok(-0.5 * s2 * s)
    }

    /// `-(b' + b^2)/2` expressed at the original-coordinate point `x`:
    /// `sigma sigma''/4 - sigma'^2/8`. This is the exponent rate of the
    /// bridge functional in the density representation.
    #[inline]
    pub fn potential_at(&self, x: f64) -> f64 {
        let (s, s1, s2) = self.spec.jet(x);
        0.25 * s * s2 - 0.125 * s1 * s1
    }

    /// `d_sigma(a, b) = |g(b) - g(a)|`.
    #[inline]
    pub fn distance(&self, a: f64, b: f64) -> Result<f64> {
        match &*self.repr {
            Repr::Linear { c } => Ok((b - a).abs() / c),
            Repr::Table(_) => Ok((self.forward(b)? - self.forward(a)?).abs()),
        }
    }
}

pub fn lamperti_forward(ctx: &TransformContext, y: f64) -> Result<f64> {
    ctx.forward(y)
}

pub fn lamperti_inverse(ctx: &TransformContext, z: f64) -> Result<f64> {
    ctx.inverse(z)
}

pub fn drift(ctx: &TransformContext, z: f64) -> Result<f64> {
    ctx.drift(z)
}

pub fn drift_derivative(ctx: &TransformContext, z: f64) -> Result<f64> {
    ctx.drift_derivative(z)
}

/// `|∫_a^b du / sigma(u)|` by adaptive quadrature.
pub fn geodesic_distance(spec: &CoefficientSpec, a: f64, b: f64, quad_tol: f64) -> Result<f64> {
    if let Some(c) = spec.as_constant() {
        return Ok((b - a).abs() / c);
    }
    Ok(quadrature::integrate(|u| 1.0 / spec.value(u), a, b, quad_tol)?.abs())
}
