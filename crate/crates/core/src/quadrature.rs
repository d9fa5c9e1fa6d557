//! Adaptive Gauss–Kronrod (7/15) quadrature and a few fixed rules.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];

// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Gauss–Legendre 5-point nodes and weights on [-1, 1].
pub(crate) const GL5: [(f64, f64); 5] = [
    (-0.906_179_845_938_664, 0.236_926_885_056_189_08),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.0, 0.568_888_888_888_888_9),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.906_179_845_938_664, 0.236_926_885_056_189_08),
];

/// Default cap on the number of subintervals.
pub const MAX_INTERVALS: usize = 2000;

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let s = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    let result = kronrod * half;
    let err = ((kronrod - gauss) * half).abs();
    (result, err)
}

/// Integrates `f` over `[a, b]` (either orientation) to absolute tolerance
/// `tol`, bisecting the interval with the largest error estimate.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    integrate_with_budget(f, a, b, tol, MAX_INTERVALS)
}

pub fn integrate_with_budget<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    tol: f64,
    max_intervals: usize,
) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    if b < a {
        return integrate_with_budget(f, b, a, tol, max_intervals).map(|v| -v);
    }
    let (r, e) = gk15(&f, a, b);
    if !r.is_finite() {
        return Err(Error::QuadratureFailure {
            a,
            b,
            estimate: f64::INFINITY,
            intervals: 1,
        });
    }
    let mut parts = vec![(a, b, r, e)];
    let mut total_err = e;
    // Floating-point floor: no point refining below a few ulps of the result.
    let floor = |v: f64| 50.0 * f64::EPSILON * v.abs();
    loop {
        let total: f64 = parts.iter().map(|p| p.2).sum();
        if total_err <= tol.max(floor(total)) {
            return Ok(total);
        }
        if parts.len() >= max_intervals {
            return Err(Error::QuadratureFailure {
                a,
                b,
                estimate: total_err,
                intervals: parts.len(),
            });
        }
        let (idx, _) = parts
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("nonempty");
        let (lo, hi, _, err) = parts.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        let (r1, e1) = gk15(&f, lo, mid);
        let (r2, e2) = gk15(&f, mid, hi);
        total_err += e1 + e2 - err;
        parts.push((lo, mid, r1, e1));
        parts.push((mid, hi, r2, e2));
    }
}

/// Composite trapezoid rule on equispaced samples covering a span of
/// `duration`.
pub fn trapezoid(samples: &[f64], duration: f64) -> f64 {
    match samples.len() {
        0 | 1 => 0.0,
        n => {
            let inner: f64 = samples[1..n - 1].iter().sum();
            let dt = duration / (n - 1) as f64;
            dt * (0.5 * (samples[0] + samples[n - 1]) + inner)
        }
    }
}
