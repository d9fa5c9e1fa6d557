//! Deterministic reductions and small statistical helpers.

/// Pairwise (fixed-tree) summation. The tree depends only on the length, so
/// the result is bit-stable regardless of how the inputs were produced.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Sample mean with standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub count: usize,
}

impl MeanSe {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                se: f64::NAN,
                count: 0,
            };
        }
        if xs.iter().all(|&x| x == xs[0]) {
            return Self {
                mean: xs[0],
                se: 0.0,
                count: n,
            };
        }
        let mean = pairwise_sum(xs) / n as f64;
        let se = if n > 1 {
            let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
            (pairwise_sum(&dev) / (n - 1) as f64 / n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, se, count: n }
    }

    pub fn variance(&self) -> f64 {
        self.se * self.se * self.count as f64
    }
}

/// Unbiased sample variance.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = MeanSe::from_samples(xs);
    m.variance()
}

/// `sqrt(a^2 + b^2)`.
pub fn combine_se(a: f64, b: f64) -> f64 {
    a.hypot(b)
}

/// Ordinary least squares slope and intercept of `y` on `x`.
pub fn ols(x: &[f64], y: &[f64]) -> (f64, f64) {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = pairwise_sum(x) / n;
    let my = pairwise_sum(y) / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Pearson correlation.
pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = pairwise_sum(x) / n;
    let my = pairwise_sum(y) / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}
