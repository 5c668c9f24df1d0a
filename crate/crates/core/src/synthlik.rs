//! Synthetic-likelihood evaluation.
//!
//! The estimated SL uses the sample mean and covariance of `m` simulated
//! summary vectors. For the MA(1) benchmark the mean `b(theta) = (1 + theta^2,
//! theta)` and the leading-order covariance `Sigma_n(theta)` are available in
//! closed form, which gives the "exact" SL used by the grid posteriors and the
//! asymptotic checks.

use nalgebra::{DMatrix, DVector};

use crate::error::{domain, Error, Result};
use crate::linalg::{chol_logdet, cholesky, min_eigenvalue, mvn_logpdf, sample_mean_cov};
use crate::models::Model;
use crate::rng::derive_seed;
use crate::summaries::SummaryVec;

/// Singularity threshold on the smallest eigenvalue of an estimated covariance.
pub const SINGULAR_TOL: f64 = 1e-12;

/// Sample moments of `m` simulated summary vectors at one parameter value.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthLikEstimate {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub m: usize,
}

impl SynthLikEstimate {
    pub fn logpdf(&self, s_obs: &DVector<f64>) -> Result<f64> {
        mvn_logpdf(s_obs, &self.mean, &self.cov)
    }
}

/// Simulates `m` datasets of length `n` at `theta` (simulation `i` uses the
/// child seed `i` of `seed`) and returns the mean and unbiased covariance of
/// their summaries.
///
/// The covariance is singular whenever `m <= d`; `m > d + 2` is advisable.
pub fn estimate_sl(
    model: &dyn Model,
    theta: &[f64],
    m: usize,
    n: usize,
    seed: u64,
) -> Result<SynthLikEstimate> {
    if m < 2 {
        return Err(domain(format!("need m >= 2 simulations, got {m}")));
    }
    let sims = (0..m)
        .map(|i| model.simulate_summary(theta, n, derive_seed(seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let (mean, cov) = sample_mean_cov(&sims)?;
    if !(min_eigenvalue(&cov) > SINGULAR_TOL) {
        return Err(Error::Singular {
            theta: theta.to_vec(),
            m,
        });
    }
    Ok(SynthLikEstimate { mean, cov, m })
}

/// Gaussian log-density `N(s_obs; mean, cov)` via a Cholesky factorization.
pub fn sl_logpdf(mean: &SummaryVec, cov: &DMatrix<f64>, s_obs: &SummaryVec) -> Result<f64> {
    if mean.dim() != s_obs.dim() || cov.nrows() != mean.dim() || !cov.is_square() {
        return Err(domain("dimension mismatch in sl_logpdf"));
    }
    mvn_logpdf(&s_obs.values, &mean.values, cov)
}

fn check_ma1_theta(theta: f64) -> Result<()> {
    if !(theta > -1.0 && theta < 1.0) {
        return Err(Error::ParameterDomain {
            name: "theta",
            value: theta,
            constraint: "-1 < theta < 1",
        });
    }
    Ok(())
}

/// `b(theta) = (1 + theta^2, theta)`.
pub fn ma1_exact_mean(theta: f64) -> Result<SummaryVec> {
    check_ma1_theta(theta)?;
    SummaryVec::new(
        ma1_mean(theta),
        vec!["S0".to_string(), "S1".to_string()],
    )
}

pub(crate) fn ma1_mean(theta: f64) -> DVector<f64> {
    DVector::from_vec(vec![1.0 + theta * theta, theta])
}

/// `db/dtheta = (2 theta, 1)` as a 2x1 matrix.
pub fn ma1_mean_gradient(theta: f64) -> DMatrix<f64> {
    DMatrix::from_column_slice(2, 1, &[2.0 * theta, 1.0])
}

/// Leading-order entries `(S11, S12, S22)` of `Sigma_n(theta)`.
fn ma1_cov_entries(theta: f64, n: usize) -> (f64, f64, f64) {
    let nf = n as f64;
    let x = theta * theta;
    let a = 1.0 + x;
    let s11 = 2.0 * a * a / nf + 4.0 * (nf - 1.0) * x / (nf * nf);
    let s22 = ((nf - 1.0) * (a * a + x) + 2.0 * (nf - 2.0) * x) / (nf * nf);
    let s12 = 4.0 * (nf - 1.0) * a * theta / (nf * nf);
    (s11, s12, s22)
}

/// Leading-order covariance of the MA(1) autocovariance summaries; the
/// `O(n^-2)` remainder is dropped.
pub fn ma1_exact_cov(theta: f64, n: usize) -> Result<DMatrix<f64>> {
    check_ma1_theta(theta)?;
    if n < 2 {
        return Err(domain(format!("n must be >= 2, got {n}")));
    }
    let (s11, s12, s22) = ma1_cov_entries(theta, n);
    if !(s11 > 0.0 && s11 * s22 - s12 * s12 > 0.0) {
        return Err(Error::CovarianceDomain { theta, n });
    }
    Ok(DMatrix::from_row_slice(2, 2, &[s11, s12, s12, s22]))
}

/// `d Sigma_n(theta) / d theta`, differentiating the same leading-order terms.
pub fn ma1_exact_cov_derivative(theta: f64, n: usize) -> DMatrix<f64> {
    let nf = n as f64;
    let a = 1.0 + theta * theta;
    let d11 = 8.0 * a * theta / nf + 8.0 * (nf - 1.0) * theta / (nf * nf);
    let d22 = ((nf - 1.0) * (4.0 * a * theta + 2.0 * theta) + 4.0 * (nf - 2.0) * theta) / (nf * nf);
    let d12 = 4.0 * (nf - 1.0) * (1.0 + 3.0 * theta * theta) / (nf * nf);
    DMatrix::from_row_slice(2, 2, &[d11, d12, d12, d22])
}

/// Exact synthetic likelihood of the MA(1) model at sample size `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExactMa1SL {
    pub n: usize,
}

impl ExactMa1SL {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(domain(format!("n must be >= 2, got {n}")));
        }
        Ok(Self { n })
    }

    pub fn mean(&self, theta: f64) -> Result<DVector<f64>> {
        check_ma1_theta(theta)?;
        Ok(ma1_mean(theta))
    }

    pub fn cov(&self, theta: f64) -> Result<DMatrix<f64>> {
        ma1_exact_cov(theta, self.n)
    }

    /// `ln N(s_obs; b(theta), Sigma_n(theta))`.
    pub fn loglik(&self, theta: f64, s_obs: &DVector<f64>) -> Result<f64> {
        mvn_logpdf(s_obs, &self.mean(theta)?, &self.cov(theta)?)
    }
}

/// Limit behaviour of the observed summaries: `S_n -> b0` and
/// `sqrt(n)(S_n - b0) => N(0, V)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitTarget {
    pub b0: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl LimitTarget {
    pub fn new(b0: DVector<f64>, v: DMatrix<f64>) -> Result<Self> {
        if v.nrows() != b0.len() || !v.is_square() {
            return Err(domain("V must be d x d"));
        }
        if (&v - v.transpose()).amax() > 1e-12 * v.amax().max(1.0) {
            return Err(domain("V must be symmetric"));
        }
        Ok(Self { b0, v })
    }

    /// The finite-sample summary law `(b0, V / n)`.
    pub fn at_sample_size(&self, n: usize) -> Self {
        Self {
            b0: self.b0.clone(),
            v: &self.v / n as f64,
        }
    }
}

/// KL divergence from the Gaussian summary law `N(b0, V0)` (with `V0 =
/// target.v`) to the synthetic likelihood `N(b, sigma)`:
/// `ln|sigma|/2 + tr(sigma^-1 V0)/2 + (b-b0)' sigma^-1 (b-b0)/2 - ln|V0|/2 - d/2`.
pub fn kl_gaussian_sl(target: &LimitTarget, b: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    let d = b.len();
    if target.b0.len() != d || sigma.nrows() != d {
        return Err(domain("dimension mismatch in kl_gaussian_sl"));
    }
    let ch_s = cholesky(sigma)?;
    let ch_v = cholesky(&target.v)?;
    let diff = b - &target.b0;
    let trace = ch_s.solve(&target.v).trace();
    let quad = diff.dot(&ch_s.solve(&diff));
    let kl = 0.5 * (chol_logdet(&ch_s) - chol_logdet(&ch_v) + trace + quad - d as f64);
    Ok(kl.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MisspecIndex {
    pub value: f64,
    pub argmin: f64,
}

/// `inf_theta (b(theta) - b0)' [n Sigma_n(theta)]^-1 (b(theta) - b0)` over a
/// grid, refined by golden-section search between the neighbours of the best
/// grid point. `cov_fn(theta, n)` returns `Sigma_n(theta)`.
pub fn misspec_index<M, C>(
    mean_fn: M,
    cov_fn: C,
    b0: &DVector<f64>,
    n: usize,
    theta_grid: &[f64],
) -> Result<MisspecIndex>
where
    M: Fn(f64) -> Result<DVector<f64>>,
    C: Fn(f64, usize) -> Result<DMatrix<f64>>,
{
    if theta_grid.is_empty() {
        return Err(domain("empty theta grid"));
    }
    let q = |theta: f64| -> Result<f64> {
        let diff = mean_fn(theta)? - b0;
        let scaled = cov_fn(theta, n)? * n as f64;
        let ch = cholesky(&scaled)?;
        Ok(diff.dot(&ch.solve(&diff)))
    };
    let mut best = (0usize, f64::INFINITY);
    for (i, &t) in theta_grid.iter().enumerate() {
        let v = q(t)?;
        if v < best.1 {
            best = (i, v);
        }
    }
    let (i, grid_value) = best;
    if theta_grid.len() < 3 {
        return Ok(MisspecIndex {
            value: grid_value,
            argmin: theta_grid[i],
        });
    }
    let lo = theta_grid[i.saturating_sub(1)];
    let hi = theta_grid[(i + 1).min(theta_grid.len() - 1)];
    let (t, v) = golden_section_min(&q, lo, hi, 1e-12)?;
    Ok(if v < grid_value {
        MisspecIndex { value: v, argmin: t }
    } else {
        MisspecIndex {
            value: grid_value,
            argmin: theta_grid[i],
        }
    })
}

fn golden_section_min<F>(f: &F, mut a: f64, mut b: f64, tol: f64) -> Result<(f64, f64)>
where
    F: Fn(f64) -> Result<f64>,
{
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    for _ in 0..200 {
        if (b - a).abs() < tol {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
    }
    Ok(if fc < fd { (c, fc) } else { (d, fd) })
}

/// Tempered log-density `alpha * logpdf_value`.
pub fn temper_logpdf(logpdf_value: f64, alpha: f64) -> Result<f64> {
    if !(alpha >= 0.0) {
        return Err(domain(format!("tempering exponent must be >= 0, got {alpha}")));
    }
    if alpha == 0.0 {
        return Ok(0.0);
    }
    Ok(alpha * logpdf_value)
}
