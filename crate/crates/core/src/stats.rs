//! Small statistics helpers shared by the checkers and the harness.

use statrs::statistics::{Data, OrderStatistics, Statistics};

/// Two-sided Kolmogorov–Smirnov distance between a sample and a CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Sample mean and its standard error.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let mean = xs.mean();
    let se = if xs.len() > 1 {
        xs.variance().sqrt() / (xs.len() as f64).sqrt()
    } else {
        f64::NAN
    };
    (mean, se)
}

/// Empirical quantile, `q` in [0, 1].
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    Data::new(xs.to_vec()).quantile(q)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares fit of `y = intercept + slope·x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Fit {
    weighted_linear_fit(x, y, &vec![1.0; x.len()])
}

/// Weighted least squares; `r2` is the weighted coefficient of determination.
pub fn weighted_linear_fit(x: &[f64], y: &[f64], w: &[f64]) -> Fit {
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(a, w)| a * w).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(b, w)| b * w).sum::<f64>() / sw;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for ((a, b), w) in x.iter().zip(y).zip(w) {
        sxy += w * (a - mx) * (b - my);
        sxx += w * (a - mx).powi(2);
        syy += w * (b - my).powi(2);
    }
    let slope = sxy / sxx;
    Fit {
        slope,
        intercept: my - slope * mx,
        r2: if syy == 0.0 {
            1.0
        } else {
            sxy * sxy / (sxx * syy)
        },
    }
}
