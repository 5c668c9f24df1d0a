//! Descriptive statistics on samples of draws.

use crate::error::{domain, Result};
use crate::summaries::quantile_sorted;

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Moment skewness and excess kurtosis.
pub fn skew_kurt(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = mean(x);
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in x {
        let d = v - m;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
}

pub fn sorted(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Type-7 quantile of an unsorted sample.
pub fn quantile(x: &[f64], p: f64) -> f64 {
    quantile_sorted(&sorted(x), p)
}

/// Equal-tailed credible interval at the given level.
pub fn equal_tailed(x: &[f64], level: f64) -> (f64, f64) {
    let s = sorted(x);
    let a = 0.5 * (1.0 - level);
    (quantile_sorted(&s, a), quantile_sorted(&s, 1.0 - a))
}

/// Kolmogorov-Smirnov distance between a sample and a continuous CDF.
pub fn ks_distance(x: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let s = sorted(x);
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &v) in s.iter().enumerate() {
        let f = cdf(v);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    d
}

/// KS distance to the exponential law with the given mean.
pub fn ks_exponential(x: &[f64], mean: f64) -> f64 {
    ks_distance(x, |v| if v <= 0.0 { 0.0 } else { 1.0 - (-v / mean).exp() })
}

/// Silverman's rule-of-thumb bandwidth.
pub fn silverman_bandwidth(x: &[f64]) -> f64 {
    let sd = variance(x).sqrt();
    let s = sorted(x);
    let iqr = quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * (x.len() as f64).powf(-0.2)
}

/// Gaussian kernel density estimate on `points` equispaced abscissae spanning
/// the sample range padded by three bandwidths.
pub fn kde(x: &[f64], points: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if x.len() < 2 || points < 3 {
        return Err(domain("kde needs at least 2 draws and 3 evaluation points"));
    }
    let h = silverman_bandwidth(x);
    if !(h > 0.0) {
        return Err(domain("kde bandwidth is zero (constant sample)"));
    }
    let s = sorted(x);
    let lo = s[0] - 3.0 * h;
    let hi = s[s.len() - 1] + 3.0 * h;
    let step = (hi - lo) / (points - 1) as f64;
    let grid: Vec<f64> = (0..points).map(|i| lo + step * i as f64).collect();
    let norm = 1.0 / (x.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let dens = grid
        .iter()
        .map(|&g| {
            // only kernels within 8h contribute at double precision
            let a = s.partition_point(|&v| v < g - 8.0 * h);
            let b = s.partition_point(|&v| v <= g + 8.0 * h);
            s[a..b]
                .iter()
                .map(|&v| {
                    let u = (g - v) / h;
                    (-0.5 * u * u).exp()
                })
                .sum::<f64>()
                * norm
        })
        .collect();
    Ok((grid, dens))
}

/// Locations of the local maxima of a curve that exceed `rel_height` times
/// its global maximum.
pub fn curve_modes(x: &[f64], y: &[f64], rel_height: f64) -> Vec<f64> {
    let top = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let n = y.len();
    let mut out = Vec::new();
    for i in 0..n {
        let left = i == 0 || y[i] > y[i - 1];
        let right = i + 1 == n || y[i] >= y[i + 1];
        if left && right && y[i] >= rel_height * top {
            out.push(x[i]);
        }
    }
    out
}

/// Modes of a sample's Gaussian KDE holding at least 5% of the peak height.
pub fn sample_modes(x: &[f64]) -> Result<Vec<f64>> {
    let (g, d) = kde(x, 512)?;
    Ok(curve_modes(&g, &d, 0.05))
}
