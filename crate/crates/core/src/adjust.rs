//! Two-step adjusted BSL: a naive posterior with a fixed SL covariance
//! `Delta_n`, then an affine rescaling of its draws using a block-bootstrap
//! estimate of the score variance `W`.

use nalgebra::{DMatrix, DVector};
use serde_json::json;

use crate::csv::{fmt_f64, CsvTable};
use crate::error::{domain, Result};
use crate::linalg::{cholesky, sym_inv_sqrt, sym_sqrt};
use crate::models::{Model, TimeSeries};
use crate::posterior::{grid_posterior, ma1_grid, GridPosterior};
use crate::rng::{derive_seed, derive_seed_path};
use crate::stats;
use crate::summaries::{autocov, block_bootstrap_cov, BootstrapSpec};
use crate::synthlik::{ma1_mean, ma1_mean_gradient};

/// Naive BSL grid posterior for a scalar parameter with a closed-form mean
/// map: the SL covariance is the fixed matrix `delta_n` (default `I/n`).
pub fn naive_grid_posterior<M, P>(
    mean_fn: M,
    log_prior_fn: P,
    s_obs: &DVector<f64>,
    n: usize,
    delta_n: Option<&DMatrix<f64>>,
    grid: &[f64],
) -> Result<GridPosterior>
where
    M: Fn(f64) -> DVector<f64>,
    P: Fn(f64) -> f64,
{
    let d = s_obs.len();
    let delta = delta_n
        .cloned()
        .unwrap_or_else(|| DMatrix::identity(d, d) / n as f64);
    if delta.nrows() != d || !delta.is_square() {
        return Err(domain("Delta_n must be d x d"));
    }
    let ch = cholesky(&delta).map_err(|_| domain("Delta_n is not positive-definite"))?;
    grid_posterior(
        |t| {
            let r = mean_fn(t) - s_obs;
            -0.5 * r.dot(&ch.solve(&r))
        },
        log_prior_fn,
        grid,
    )
}

/// `W = G' Sigma^-1 V Sigma^-1 G` with `Sigma = n Delta_n` and
/// `V = n * block_bootstrap_cov(y)`; `g` is `d x p`.
pub fn estimate_w<F>(
    y: &[f64],
    summary_fn: F,
    g: &DMatrix<f64>,
    delta_n: &DMatrix<f64>,
    spec: &BootstrapSpec,
) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<DVector<f64>> + Sync,
{
    let n = y.len() as f64;
    let v = block_bootstrap_cov(y, summary_fn, spec)? * n;
    w_from_parts(g, &(delta_n * n), &v)
}

pub fn w_from_parts(g: &DMatrix<f64>, sigma: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if g.nrows() != sigma.nrows() || v.nrows() != sigma.nrows() {
        return Err(domain("dimension mismatch in W estimate"));
    }
    let sg = cholesky(sigma)?.solve(g);
    let w = sg.transpose() * v * &sg;
    Ok(0.5 * (&w + w.transpose()))
}

/// Placement of the square roots in the draw transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TransformVariant {
    /// `A = Omega W^{1/2} Omega^{-1/2}`, giving adjusted covariance
    /// `Omega W Omega`.
    #[default]
    Sandwich,
    /// `A = Omega W Omega^{-1/2}` exactly as printed.
    Literal,
}

/// The matrix `A` of the draw transform.
pub fn transform_matrix(
    omega: &DMatrix<f64>,
    w_hat: &DMatrix<f64>,
    variant: TransformVariant,
) -> Result<DMatrix<f64>> {
    if cholesky(omega).is_err() {
        return Err(domain("Omega is not positive-definite"));
    }
    let w_part = match variant {
        TransformVariant::Sandwich => {
            sym_sqrt(w_hat).map_err(|_| domain("W has a negative eigenvalue"))?
        }
        TransformVariant::Literal => {
            sym_sqrt(w_hat).map_err(|_| domain("W has a negative eigenvalue"))?;
            w_hat.clone()
        }
    };
    Ok(omega * w_part * sym_inv_sqrt(omega)?)
}

/// `theta_bar + A (theta_j - theta_bar)` for every draw.
pub fn adjust_draws(
    draws: &[Vec<f64>],
    theta_bar: &[f64],
    omega: &DMatrix<f64>,
    w_hat: &DMatrix<f64>,
    variant: TransformVariant,
) -> Result<(Vec<Vec<f64>>, DMatrix<f64>)> {
    let a = transform_matrix(omega, w_hat, variant)?;
    Ok((apply_transform(draws, theta_bar, &a), a))
}

pub fn apply_transform(draws: &[Vec<f64>], theta_bar: &[f64], a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    let c = DVector::from_column_slice(theta_bar);
    draws
        .iter()
        .map(|d| {
            let out = &c + a * (DVector::from_column_slice(d) - &c);
            out.iter().copied().collect()
        })
        .collect()
}

/// Result of the two-step procedure for a scalar or vector parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjustmentReport {
    pub n: usize,
    pub theta_bar: Vec<f64>,
    pub omega: DMatrix<f64>,
    /// The n-scaled `W` that enters the transform.
    pub w_hat: DMatrix<f64>,
    pub transform: DMatrix<f64>,
    pub naive_draws: Vec<Vec<f64>>,
    pub adjusted_draws: Vec<Vec<f64>>,
    pub level: f64,
}

fn mat_json(m: &DMatrix<f64>) -> serde_json::Value {
    json!((0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect::<Vec<_>>())
        .collect::<Vec<_>>())
}

impl AdjustmentReport {
    fn col(draws: &[Vec<f64>], j: usize) -> Vec<f64> {
        draws.iter().map(|d| d[j]).collect()
    }

    pub fn naive_column(&self, j: usize) -> Vec<f64> {
        Self::col(&self.naive_draws, j)
    }

    pub fn adjusted_column(&self, j: usize) -> Vec<f64> {
        Self::col(&self.adjusted_draws, j)
    }

    pub fn naive_interval(&self, j: usize) -> (f64, f64) {
        stats::equal_tailed(&self.naive_column(j), self.level)
    }

    pub fn adjusted_interval(&self, j: usize) -> (f64, f64) {
        stats::equal_tailed(&self.adjusted_column(j), self.level)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let p = self.theta_bar.len();
        let per_param: Vec<_> = (0..p)
            .map(|j| {
                let nv = self.naive_column(j);
                let av = self.adjusted_column(j);
                json!({
                    "naive_mean": stats::mean(&nv),
                    "naive_var": stats::variance(&nv),
                    "naive_interval": self.naive_interval(j),
                    "adjusted_mean": stats::mean(&av),
                    "adjusted_var": stats::variance(&av),
                    "adjusted_interval": self.adjusted_interval(j),
                })
            })
            .collect();
        json!({
            "n": self.n,
            "theta_bar": self.theta_bar,
            "omega": mat_json(&self.omega),
            "w_hat": mat_json(&self.w_hat),
            "transform": mat_json(&self.transform),
            "level": self.level,
            "n_draws": self.adjusted_draws.len(),
            "parameters": per_param,
        })
    }

    /// Draws as CSV: `draw,method,theta...`.
    pub fn draws_csv(&self) -> String {
        let p = self.theta_bar.len();
        let mut header = vec!["draw".to_string(), "method".to_string()];
        if p == 1 {
            header.push("theta".into());
        } else {
            header.extend((1..=p).map(|j| format!("theta{j}")));
        }
        let mut t = CsvTable::new(&header);
        for (label, set) in [("naive", &self.naive_draws), ("adjusted", &self.adjusted_draws)] {
            for (i, d) in set.iter().enumerate() {
                let mut row = vec![i.to_string(), label.to_string()];
                row.extend(d.iter().map(|&v| fmt_f64(v)));
                t.row(&row);
            }
        }
        t.finish()
    }
}

/// Applies the adjustment to a set of naive draws with moments
/// `(theta_bar, omega)`; `w_hat` is the unscaled `W` estimate.
pub fn adjust_sample(
    naive_draws: Vec<Vec<f64>>,
    theta_bar: Vec<f64>,
    omega: DMatrix<f64>,
    w_hat: &DMatrix<f64>,
    n: usize,
    variant: TransformVariant,
    level: f64,
) -> Result<AdjustmentReport> {
    let w_scaled = w_hat * n as f64;
    let (adjusted_draws, transform) =
        adjust_draws(&naive_draws, &theta_bar, &omega, &w_scaled, variant)?;
    Ok(AdjustmentReport {
        n,
        theta_bar,
        omega,
        w_hat: w_scaled,
        transform,
        naive_draws,
        adjusted_draws,
        level,
    })
}

/// Settings of the MA(1) adjusted pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjustConfig {
    pub grid: Vec<f64>,
    pub n_draws: usize,
    pub block_len: usize,
    pub n_boot: usize,
    pub variant: TransformVariant,
    pub level: f64,
    pub seed: u64,
}

impl AdjustConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            grid: ma1_grid(),
            n_draws: 10_000,
            block_len: 10,
            n_boot: 1000,
            variant: TransformVariant::Sandwich,
            level: 0.95,
            seed,
        }
    }
}

/// Naive BSL (`Delta_n = I/n`, exact MA(1) mean, flat prior on the grid),
/// bootstrap `W` from the observed series, and the draw adjustment.
pub fn run_adjusted_pipeline(y: &TimeSeries, cfg: &AdjustConfig) -> Result<AdjustmentReport> {
    let n = y.len();
    let lags = [0usize, 1];
    let s_obs = autocov(y.values(), &lags)?;
    let delta_n = DMatrix::identity(2, 2) / n as f64;
    let post = naive_grid_posterior(ma1_mean, |_| 0.0, &s_obs, n, Some(&delta_n), &cfg.grid)?;
    let theta_bar = post.mean();
    let omega = DMatrix::from_element(1, 1, post.variance());
    let draws: Vec<Vec<f64>> = post
        .sample(cfg.n_draws, derive_seed_path(cfg.seed, "draws"))
        .into_iter()
        .map(|t| vec![t])
        .collect();
    let spec = BootstrapSpec::new(cfg.block_len, cfg.n_boot, derive_seed_path(cfg.seed, "bootstrap"))?;
    let w = estimate_w(
        y.values(),
        |v: &[f64]| autocov(v, &lags),
        &ma1_mean_gradient(theta_bar),
        &delta_n,
        &spec,
    )?;
    adjust_sample(draws, vec![theta_bar], omega, &w, n, cfg.variant, cfg.level)
}

/// `d b / d theta` (a `d x p` matrix) by central differences of simulated
/// summary means with common random numbers.
pub fn mean_gradient_fd(
    model: &dyn Model,
    theta: &[f64],
    n: usize,
    m: usize,
    rel_step: f64,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let d = model.summary_dim();
    let p = theta.len();
    let mean_at = |t: &[f64]| -> Result<DVector<f64>> {
        let mut acc = DVector::zeros(d);
        for i in 0..m {
            acc += model.simulate_summary(t, n, derive_seed(seed, i as u64))?;
        }
        Ok(acc / m as f64)
    };
    let mut g = DMatrix::zeros(d, p);
    for j in 0..p {
        let h = rel_step * theta[j].abs().max(1.0);
        let mut up = theta.to_vec();
        let mut dn = theta.to_vec();
        up[j] += h;
        dn[j] -= h;
        let diff = (mean_at(&up)? - mean_at(&dn)?) / (2.0 * h);
        g.set_column(j, &diff);
    }
    Ok(g)
}
