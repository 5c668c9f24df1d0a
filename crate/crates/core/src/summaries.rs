//! Summary statistics and the circular moving-block bootstrap.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::linalg::sample_mean_cov;
use crate::models::TimeSeries;
use crate::rng::{derive_seed, rng_from_seed};

/// A labelled summary vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryVec {
    pub values: DVector<f64>,
    pub labels: Vec<String>,
}

impl SummaryVec {
    pub fn new(values: DVector<f64>, labels: Vec<String>) -> Result<Self> {
        if values.is_empty() {
            return Err(domain("summary vector must have dimension >= 1"));
        }
        if values.len() != labels.len() {
            return Err(domain("one label per summary coordinate"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(domain("summary values must be finite"));
        }
        Ok(Self { values, labels })
    }

    /// Unlabelled vector; coordinates are named `S1..Sd`.
    pub fn unlabelled(values: DVector<f64>) -> Result<Self> {
        let labels = (1..=values.len()).map(|j| format!("S{j}")).collect();
        Self::new(values, labels)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// `S_j = (1/n) sum_{t=j+1}^{n} y_t y_{t-j}` for each requested lag.
pub fn autocov(y: &[f64], lags: &[usize]) -> Result<DVector<f64>> {
    let n = y.len();
    if let Some(&bad) = lags.iter().find(|&&l| l >= n) {
        return Err(domain(format!("lag {bad} must be smaller than n = {n}")));
    }
    let inv_n = 1.0 / n as f64;
    Ok(DVector::from_iterator(
        lags.len(),
        lags.iter().map(|&j| {
            y[j..]
                .iter()
                .zip(&y[..n - j])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                * inv_n
        }),
    ))
}

pub fn autocov_summaries(y: &TimeSeries, lags: &[usize]) -> Result<SummaryVec> {
    let values = autocov(y.values(), lags)?;
    SummaryVec::new(values, lags.iter().map(|l| format!("S{l}")).collect())
}

/// Position of the `p`-quantile under linear interpolation of order
/// statistics (`h = (n-1)p`, zero-based): lower rank, upper rank, weight.
fn type7_position(n: usize, p: f64) -> (usize, usize, f64) {
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    (lo, hi, h - lo as f64)
}

/// Interpolated quantile of already-sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let (lo, hi, w) = type7_position(sorted.len(), p);
    sorted[lo] + w * (sorted[hi] - sorted[lo])
}

/// Places the order statistics with the given (ascending, deduplicated) ranks
/// at their final positions using successive partial selections.
fn select_ranks(data: &mut [f64], ranks: &[usize]) {
    let mut start = 0;
    for &r in ranks {
        if r < start {
            continue;
        }
        data[start..].select_nth_unstable_by(r - start, |a, b| a.total_cmp(b));
        start = r + 1;
        if start >= data.len() {
            break;
        }
    }
}

/// Quantiles at the levels `ps` of the values `map(x)` for `x` in `data`,
/// where `map` must be non-decreasing. `data` is reordered.
fn mapped_quantiles(data: &mut [f64], ps: &[f64], map: impl Fn(f64) -> f64) -> Vec<f64> {
    let n = data.len();
    let positions: Vec<_> = ps.iter().map(|&p| type7_position(n, p)).collect();
    let mut ranks: Vec<usize> = positions.iter().flat_map(|&(lo, hi, _)| [lo, hi]).collect();
    ranks.sort_unstable();
    ranks.dedup();
    select_ranks(data, &ranks);
    positions
        .iter()
        .map(|&(lo, hi, w)| {
            let a = map(data[lo]);
            let b = map(data[hi]);
            a + w * (b - a)
        })
        .collect()
}

const GK_LEVELS: [f64; 4] = [0.25, 0.5, 0.75, 0.01];

/// Quartile summaries for the g-and-k family, computed from `data` after the
/// monotone map `map` (the identity for observed data). Reorders `data`.
pub(crate) fn gk_summaries_mapped(
    data: &mut [f64],
    include_tail: bool,
    map: impl Fn(f64) -> f64,
) -> Result<DVector<f64>> {
    let n = data.len();
    if include_tail && n < 100 {
        return Err(domain(format!(
            "the 1% quantile summary needs n >= 100, got {n}"
        )));
    }
    let levels = if include_tail { &GK_LEVELS[..] } else { &GK_LEVELS[..3] };
    let q = mapped_quantiles(data, levels, map);
    let (q1, q2, q3) = (q[0], q[1], q[2]);
    let iqr = q3 - q1;
    if !(iqr > 0.0) {
        return Err(Error::DegenerateSummary(format!(
            "interquartile range is {iqr}"
        )));
    }
    let mut s = vec![q2, iqr, (q3 - 2.0 * q2 + q1) / iqr];
    if include_tail {
        s.push(q[3]);
    }
    Ok(DVector::from_vec(s))
}

/// `(median, IQR, (Q3 - 2 Q2 + Q1)/IQR [, 1% quantile])` of `y`.
pub fn gk_summary_values(y: &[f64], include_tail: bool) -> Result<DVector<f64>> {
    let mut data = y.to_vec();
    gk_summaries_mapped(&mut data, include_tail, |x| x)
}

pub fn gk_summaries(y: &TimeSeries, include_tail: bool) -> Result<SummaryVec> {
    let values = gk_summary_values(y.values(), include_tail)?;
    SummaryVec::unlabelled(values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapSpec {
    pub block_len: usize,
    pub n_boot: usize,
    pub seed: u64,
}

impl BootstrapSpec {
    pub fn new(block_len: usize, n_boot: usize, seed: u64) -> Result<Self> {
        if block_len < 1 {
            return Err(domain("block length must be >= 1"));
        }
        if n_boot < 2 {
            return Err(domain("need at least 2 bootstrap replicates"));
        }
        Ok(Self {
            block_len,
            n_boot,
            seed,
        })
    }

    /// Block length 10, 1000 replicates.
    pub fn with_seed(seed: u64) -> Self {
        Self {
            block_len: 10,
            n_boot: 1000,
            seed,
        }
    }
}

/// One circular moving-block pseudo-series written into `out`.
fn resample_into(y: &[f64], block_len: usize, rng: &mut impl Rng, out: &mut Vec<f64>) {
    let n = y.len();
    out.clear();
    while out.len() < n {
        let start = rng.random_range(0..n);
        let take = block_len.min(n - out.len());
        out.extend((0..take).map(|i| y[(start + i) % n]));
    }
}

/// Sample covariance (divisor `n_boot - 1`) of `summary_fn` over circular
/// moving-block bootstrap resamples of `y`. Replicate `r` draws its block
/// starts from the child stream `r` of `spec.seed`.
pub fn block_bootstrap_cov<F>(y: &[f64], summary_fn: F, spec: &BootstrapSpec) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<DVector<f64>>,
{
    let n = y.len();
    if spec.block_len == 0 || spec.block_len > n {
        return Err(domain(format!(
            "block length {} must lie in [1, n = {n}]",
            spec.block_len
        )));
    }
    if spec.n_boot < 2 {
        return Err(domain("need at least 2 bootstrap replicates"));
    }
    let mut buf = Vec::with_capacity(n);
    let mut stats = Vec::with_capacity(spec.n_boot);
    for r in 0..spec.n_boot {
        let mut rng = rng_from_seed(derive_seed(spec.seed, r as u64));
        resample_into(y, spec.block_len, &mut rng, &mut buf);
        stats.push(summary_fn(&buf)?);
    }
    let (_, cov) = sample_mean_cov(&stats)?;
    Ok(cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{simulate_ma1, Ma1Params};
    use crate::synthlik::ma1_exact_cov;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn ts(v: &[f64]) -> TimeSeries {
        TimeSeries::new(v.to_vec(), 0).unwrap()
    }

    #[test]
    fn autocov_hand_examples() {
        let s = autocov_summaries(&ts(&[1.0, 1.0, 1.0, 1.0]), &[0, 1]).unwrap();
        assert_eq!(s.values.as_slice(), &[1.0, 0.75]);
        let s = autocov_summaries(&ts(&[1.0, -1.0, 1.0, -1.0]), &[0, 1]).unwrap();
        assert_eq!(s.values.as_slice(), &[1.0, -0.75]);
        let s = autocov_summaries(&ts(&[0.0; 5]), &[0, 1]).unwrap();
        assert_eq!(s.values.as_slice(), &[0.0, 0.0]);
        assert_eq!(s.labels, vec!["S0", "S1"]);
    }

    #[test]
    fn autocov_rejects_long_lags() {
        assert!(matches!(autocov(&[1.0, 2.0, 3.0], &[0, 3]), Err(Error::Domain(_))));
    }

    #[test]
    fn quantiles_use_linear_interpolation() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&s, 0.5), 2.5);
        assert_eq!(quantile_sorted(&s, 0.25), 1.75);
        assert_eq!(quantile_sorted(&s, 0.0), 1.0);
        assert_eq!(quantile_sorted(&s, 1.0), 4.0);
    }

    fn sample(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rng_from_seed(seed);
        (0..n)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                z + 0.3 * z * z
            })
            .collect()
    }

    #[test]
    fn gk_summaries_symmetric_sample_has_zero_skew_measure() {
        let half = sample(150, 1);
        let mut y = half.clone();
        y.extend(half.iter().map(|v| -v));
        let s = gk_summary_values(&y, true).unwrap();
        assert!(s[0].abs() < 1e-12);
        assert!(s[2].abs() < 1e-12);
    }

    #[test]
    fn gk_summaries_location_scale_equivariance() {
        let y = sample(400, 2);
        let base = gk_summary_values(&y, true).unwrap();
        let shifted: Vec<f64> = y.iter().map(|v| v + 2.5).collect();
        let s = gk_summary_values(&shifted, true).unwrap();
        assert!((s[0] - base[0] - 2.5).abs() < 1e-12);
        assert!((s[1] - base[1]).abs() < 1e-12);
        assert!((s[2] - base[2]).abs() < 1e-10);
        let scaled: Vec<f64> = y.iter().map(|v| 3.0 * v).collect();
        let s = gk_summary_values(&scaled, true).unwrap();
        assert!((s[1] - 3.0 * base[1]).abs() < 1e-12);
        assert!(((s[3] - s[0]) - 3.0 * (base[3] - base[0])).abs() < 1e-12);
        assert!((s[2] - base[2]).abs() < 1e-12);
    }

    #[test]
    fn gk_summaries_errors() {
        assert!(matches!(
            gk_summary_values(&[1.0; 200], false),
            Err(Error::DegenerateSummary(_))
        ));
        assert!(gk_summary_values(&sample(50, 3), true).is_err());
        assert_eq!(gk_summary_values(&sample(50, 3), false).unwrap().len(), 3);
    }

    #[test]
    fn selection_matches_full_sort() {
        let y = sample(1001, 4);
        let mut sorted = y.clone();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let s = gk_summary_values(&y, true).unwrap();
        let q: Vec<f64> = GK_LEVELS.iter().map(|&p| quantile_sorted(&sorted, p)).collect();
        assert_eq!(s[0], q[1]);
        assert_eq!(s[1], q[2] - q[0]);
        assert_eq!(s[3], q[3]);
    }

    fn mean_fn(y: &[f64]) -> Result<DVector<f64>> {
        Ok(DVector::from_element(1, y.iter().sum::<f64>() / y.len() as f64))
    }

    #[test]
    fn bootstrap_of_constant_series_is_zero() {
        let y = vec![2.0; 50];
        let spec = BootstrapSpec::new(5, 100, 1).unwrap();
        let c = block_bootstrap_cov(&y, |v| autocov(v, &[0, 1]), &spec).unwrap();
        assert!(c.iter().all(|v| v.abs() < 1e-24));
    }

    #[test]
    fn iid_bootstrap_of_mean_matches_closed_form() {
        let n = 10_000;
        let mut rng = rng_from_seed(77);
        let y: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let m = y.iter().sum::<f64>() / n as f64;
        let s2 = y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64;
        let spec = BootstrapSpec::new(1, 2000, 5).unwrap();
        let c = block_bootstrap_cov(&y, mean_fn, &spec).unwrap();
        let oracle = s2 / n as f64;
        assert!((c[(0, 0)] / oracle - 1.0).abs() < 0.15, "{} vs {oracle}", c[(0, 0)]);
        assert_eq!(c, block_bootstrap_cov(&y, mean_fn, &spec).unwrap());
    }

    #[test]
    fn bootstrap_rejects_oversized_blocks() {
        let spec = BootstrapSpec::new(20, 10, 0).unwrap();
        assert!(block_bootstrap_cov(&[1.0; 10], mean_fn, &spec).is_err());
        assert!(BootstrapSpec::new(0, 10, 0).is_err());
        assert!(BootstrapSpec::new(2, 1, 0).is_err());
    }

    #[test]
    fn ma1_block_bootstrap_tracks_leading_order_covariance() {
        let n = 2000;
        let p = Ma1Params::new(0.5).unwrap();
        let mut avg = DMatrix::zeros(2, 2);
        for s in 0..20 {
            let y = simulate_ma1(&p, n, 300 + s).unwrap();
            let spec = BootstrapSpec::new(10, 400, 900 + s).unwrap();
            avg += block_bootstrap_cov(y.values(), |v| autocov(v, &[0, 1]), &spec).unwrap()
                * (n as f64 / 20.0);
        }
        let limit = ma1_exact_cov(0.5, n).unwrap() * n as f64;
        for j in 0..2 {
            let r = avg[(j, j)] / limit[(j, j)];
            assert!(r > 0.5 && r < 2.0, "coordinate {j}: ratio {r}");
        }
    }

    #[test]
    fn second_moment_identity() {
        let y = sample(97, 6);
        let s = autocov(&y, &[0]).unwrap()[0];
        let direct = y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64;
        assert_eq!(s, direct);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn bootstrap_covariance_is_psd(seed in 0u64..1000, block in 1usize..15) {
            let y = sample(120, seed);
            let spec = BootstrapSpec::new(block, 50, seed).unwrap();
            let c = block_bootstrap_cov(&y, |v| gk_summary_values(v, false), &spec).unwrap();
            prop_assert!((&c - c.transpose()).amax() < 1e-15);
            let eig = c.symmetric_eigenvalues();
            prop_assert!(eig.min() >= -1e-12);
        }

        #[test]
        fn lag_zero_is_nonnegative(seed in 0u64..1000) {
            let y = sample(30, seed);
            prop_assert!(autocov(&y, &[0]).unwrap()[0] >= 0.0);
        }
    }
}
