//! Compensated aggregation, least-squares slopes and the Anderson–Darling
//! normality diagnostic.

use statrs::distribution::{ContinuousCDF, Normal};

/// Neumaier-compensated sum.
pub fn neumaier_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

pub fn mean(v: &[f64]) -> f64 {
    neumaier_sum(v.iter().copied()) / v.len() as f64
}

/// Unbiased sample variance.
pub fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    neumaier_sum(v.iter().map(|x| (x - m) * (x - m))) / (v.len() as f64 - 1.0)
}

/// Unbiased sample covariance matrix of the columns of `rows`.
pub fn covariance(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let p = rows.first().map_or(0, Vec::len);
    let n = rows.len() as f64;
    let means: Vec<f64> = (0..p).map(|k| neumaier_sum(rows.iter().map(|r| r[k])) / n).collect();
    (0..p)
        .map(|k| {
            (0..p)
                .map(|l| neumaier_sum(rows.iter().map(|r| (r[k] - means[k]) * (r[l] - means[l]))) / (n - 1.0))
                .collect()
        })
        .collect()
}

/// Root mean square of `v − target`.
pub fn rmse(v: &[f64], target: f64) -> f64 {
    (neumaier_sum(v.iter().map(|x| (x - target) * (x - target))) / v.len() as f64).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares `y ≈ intercept + slope · x`. `None` when fewer than
/// two distinct abscissae are given.
pub fn line_fit(x: &[f64], y: &[f64]) -> Option<LineFit> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let mx = mean(x);
    let my = mean(y);
    let sxx = neumaier_sum(x.iter().map(|a| (a - mx) * (a - mx)));
    let sxy = neumaier_sum(x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)));
    let syy = neumaier_sum(y.iter().map(|b| (b - my) * (b - my)));
    if !(sxx > 0.0) {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Some(LineFit { slope, intercept: my - slope * mx, r2 })
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_fit(x: &[f64], y: &[f64]) -> Option<LineFit> {
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    line_fit(&lx, &ly)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AndersonDarling {
    pub a2: f64,
    /// `A²(1 + 0.75/n + 2.25/n²)`, for mean and variance estimated.
    pub a2_star: f64,
    pub critical: f64,
    pub passes: bool,
}

/// Critical value of the adjusted statistic at the 1% level with estimated
/// mean and variance.
pub const AD_CRITICAL_1PCT: f64 = 1.035;

/// Anderson–Darling test of normality with estimated parameters.
pub fn anderson_darling(sample: &[f64]) -> Option<AndersonDarling> {
    let n = sample.len();
    if n < 8 {
        return None;
    }
    let m = mean(sample);
    let s = variance(sample).sqrt();
    if !(s > 0.0) {
        return None;
    }
    let std = Normal::standard();
    let mut z: Vec<f64> = sample.iter().map(|v| (v - m) / s).collect();
    z.sort_by(f64::total_cmp);
    let nf = n as f64;
    let tail = |p: f64| p.clamp(1e-300, 1.0);
    let sum = neumaier_sum((0..n).map(|i| {
        let fi = std.cdf(z[i]);
        let fr = std.cdf(z[n - 1 - i]);
        (2.0 * i as f64 + 1.0) * (tail(fi).ln() + tail(1.0 - fr).ln())
    }));
    let a2 = -nf - sum / nf;
    let a2_star = a2 * (1.0 + 0.75 / nf + 2.25 / (nf * nf));
    Some(AndersonDarling { a2, a2_star, critical: AD_CRITICAL_1PCT, passes: a2_star < AD_CRITICAL_1PCT })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub density: f64,
}

/// Equal-width histogram over the sample range.
pub fn histogram(sample: &[f64], bins: usize) -> Vec<Bin> {
    if sample.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = sample.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = sample.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for v in sample {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let n = sample.len() as f64;
    counts
        .into_iter()
        .enumerate()
        .map(|(k, c)| Bin {
            lo: lo + k as f64 * width,
            hi: lo + (k + 1) as f64 * width,
            count: c,
            density: c as f64 / (n * width),
        })
        .collect()
}

/// `(theoretical, standardized sample)` quantile pairs with plotting
/// positions `(i + 1/2)/n`.
pub fn qq_pairs(sample: &[f64]) -> Vec<(f64, f64)> {
    if sample.len() < 2 {
        return Vec::new();
    }
    let m = mean(sample);
    let s = variance(sample).sqrt();
    let std = Normal::standard();
    let mut z: Vec<f64> = sample.iter().map(|v| (v - m) / s).collect();
    z.sort_by(f64::total_cmp);
    let n = z.len() as f64;
    z.into_iter()
        .enumerate()
        .map(|(i, v)| (std.inverse_cdf((i as f64 + 0.5) / n), v))
        .collect()
}
