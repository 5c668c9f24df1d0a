//! Numerical checks of the large-sample behaviour of the MA(1) BSL
//! posterior: score and Hessian of the exact SL, root sets, the local
//! Gaussian shape around each mode and the sandwich variance of the
//! posterior mean.

use nalgebra::{DMatrix, DVector};

use crate::csv::{fmt_f64, CsvTable};
use crate::error::{domain, Error, Result};
use crate::linalg::cholesky;
use crate::posterior::{trapezoid, GridPosterior};
use crate::synthlik::{ma1_exact_cov, ma1_exact_cov_derivative, ma1_mean, ma1_mean_gradient, ExactMa1SL};

/// Scaling of the log-determinant (trace) term of the score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TraceScaling {
    /// `1/n`: the score is exactly `n^-1 d ln g_n / d theta`.
    #[default]
    PerObservation,
    /// `1`: the trace term as printed in the scalar score formula.
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreReport {
    pub theta: f64,
    pub score: f64,
    pub hessian: f64,
}

fn check_interior(theta: f64) -> Result<()> {
    if !(theta.abs() < 0.999) {
        return Err(Error::ParameterDomain {
            name: "theta",
            value: theta,
            constraint: "|theta| < 0.999",
        });
    }
    Ok(())
}

/// Finite-difference step used for Hessians.
pub fn fd_step(theta: f64) -> f64 {
    1e-5 * theta.abs().max(1.0)
}

fn score_value(theta: f64, s_obs: &DVector<f64>, n: usize, kappa: TraceScaling) -> Result<f64> {
    let nf = n as f64;
    let sigma = ma1_exact_cov(theta, n)? * nf;
    let lambda = ma1_exact_cov_derivative(theta, n) * nf;
    let g = ma1_mean_gradient(theta);
    let resid = s_obs - ma1_mean(theta);
    let ch = cholesky(&sigma)?;
    let si_r = ch.solve(&resid);
    let si_lambda = ch.solve(&lambda);
    let k = match kappa {
        TraceScaling::PerObservation => 1.0 / nf,
        TraceScaling::Unit => 1.0,
    };
    Ok(-0.5 * k * si_lambda.trace()
        + (g.transpose() * &si_r)[(0, 0)]
        + 0.5 * si_r.dot(&(&lambda * &si_r)))
}

/// Score `M_n(theta)` of the exact MA(1) synthetic likelihood and its
/// derivative by central differences.
///
/// With `Sigma = n Sigma_n(theta)`, `Lambda = dSigma/dtheta` and `G = db/dtheta`:
/// `M_n = -kappa tr(Sigma^-1 Lambda)/2 + G' Sigma^-1 (S - b) + (S - b)' Sigma^-1 Lambda Sigma^-1 (S - b) / 2`.
pub fn sl_score_ma1_with(
    theta: f64,
    s_obs: &DVector<f64>,
    n: usize,
    kappa: TraceScaling,
) -> Result<ScoreReport> {
    check_interior(theta)?;
    if s_obs.len() != 2 {
        return Err(domain("MA(1) score needs two summaries"));
    }
    let score = score_value(theta, s_obs, n, kappa)?;
    let h = fd_step(theta);
    let hessian = (score_value(theta + h, s_obs, n, kappa)? - score_value(theta - h, s_obs, n, kappa)?)
        / (2.0 * h);
    Ok(ScoreReport {
        theta,
        score,
        hessian,
    })
}

pub fn sl_score_ma1(theta: f64, s_obs: &DVector<f64>, n: usize) -> Result<ScoreReport> {
    sl_score_ma1_with(theta, s_obs, n, TraceScaling::PerObservation)
}

/// `lim n Sigma_n(theta)`.
pub fn ma1_limit_cov(theta: f64) -> DMatrix<f64> {
    let x = theta * theta;
    let a = 1.0 + x;
    DMatrix::from_row_slice(2, 2, &[2.0 * a * a + 4.0 * x, 4.0 * a * theta, 4.0 * a * theta, a * a + 3.0 * x])
}

fn ma1_limit_cov_derivative(theta: f64) -> DMatrix<f64> {
    let a = 1.0 + theta * theta;
    DMatrix::from_row_slice(
        2,
        2,
        &[
            8.0 * a * theta + 8.0 * theta,
            4.0 * (1.0 + 3.0 * theta * theta),
            4.0 * (1.0 + 3.0 * theta * theta),
            4.0 * a * theta + 6.0 * theta,
        ],
    )
}

/// Limit score `M(theta)`: `S_n -> b0` and `n Sigma_n -> Sigma`, so the trace
/// term vanishes.
pub fn ma1_limit_score(theta: f64, b0: &DVector<f64>) -> Result<f64> {
    check_interior(theta)?;
    let sigma = ma1_limit_cov(theta);
    let lambda = ma1_limit_cov_derivative(theta);
    let g = ma1_mean_gradient(theta);
    let r = b0 - ma1_mean(theta);
    let si_r = cholesky(&sigma)?.solve(&r);
    Ok((g.transpose() * &si_r)[(0, 0)] + 0.5 * si_r.dot(&(&lambda * &si_r)))
}

/// Limit Hessian `H(theta) = dM/dtheta` by central differences.
pub fn ma1_limit_hessian(theta: f64, b0: &DVector<f64>) -> Result<f64> {
    let h = fd_step(theta);
    Ok((ma1_limit_score(theta + h, b0)? - ma1_limit_score(theta - h, b0)?) / (2.0 * h))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root {
    pub theta: f64,
    pub hessian: f64,
    pub is_local_max: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RootSet {
    pub roots: Vec<Root>,
    /// Set when the score never changes sign on the grid.
    pub no_sign_change: bool,
}

impl RootSet {
    pub fn local_maxima(&self) -> Vec<f64> {
        self.roots
            .iter()
            .filter(|r| r.is_local_max)
            .map(|r| r.theta)
            .collect()
    }
}

/// Zeros of `score_fn` located by sign changes on `grid`, refined by
/// bisection until `|score| < 1e-8` (or the bracket cannot shrink further),
/// and classified by the sign of a central-difference derivative.
pub fn find_roots<F>(score_fn: F, grid: &[f64]) -> Result<RootSet>
where
    F: Fn(f64) -> Result<f64>,
{
    if grid.len() < 2 {
        return Err(domain("root search needs at least two grid points"));
    }
    let vals = grid.iter().map(|&t| score_fn(t)).collect::<Result<Vec<_>>>()?;
    let mut roots = Vec::new();
    let classify = |t: f64| -> Result<Root> {
        let h = fd_step(t);
        let hess = (score_fn(t + h)? - score_fn(t - h)?) / (2.0 * h);
        Ok(Root {
            theta: t,
            hessian: hess,
            is_local_max: hess < 0.0,
        })
    };
    for i in 0..grid.len() {
        if vals[i] == 0.0 {
            if i > 0 && i + 1 < grid.len() {
                roots.push(classify(grid[i])?);
            }
            continue;
        }
        if i + 1 < grid.len() && vals[i + 1] != 0.0 && (vals[i] < 0.0) != (vals[i + 1] < 0.0) {
            let (mut a, mut b) = (grid[i], grid[i + 1]);
            let mut fa = vals[i];
            let mut mid = 0.5 * (a + b);
            for _ in 0..200 {
                mid = 0.5 * (a + b);
                let fm = score_fn(mid)?;
                if fm.abs() < 1e-8 && (b - a) < 1e-10 || mid == a || mid == b {
                    break;
                }
                if (fm < 0.0) == (fa < 0.0) {
                    a = mid;
                    fa = fm;
                } else {
                    b = mid;
                }
            }
            roots.push(classify(mid)?);
        }
    }
    let no_sign_change = roots.is_empty();
    Ok(RootSet {
        roots,
        no_sign_change,
    })
}

/// Roots of the exact MA(1) SL score for fixed observed summaries.
pub fn ma1_roots(s_obs: &DVector<f64>, n: usize, grid: &[f64]) -> Result<RootSet> {
    find_roots(|t| score_value(t, s_obs, n, TraceScaling::PerObservation), grid)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeCheck {
    /// `Delta` implied by the curvature of the log posterior near the root.
    pub delta_hat: f64,
    /// `Delta = -1 / H_n(theta*)`.
    pub delta: f64,
    pub discrepancy: f64,
}

/// Least-squares quadratic fit `c0 + c1 x + c2 x^2` to `(x, y)`.
pub fn quadratic_fit(x: &[f64], y: &[f64]) -> Result<[f64; 3]> {
    let a = DMatrix::from_fn(x.len(), 3, |i, j| x[i].powi(j as i32));
    let b = DVector::from_column_slice(y);
    let sol = a
        .svd(true, true)
        .solve(&b, 1e-14)
        .map_err(|e| Error::Factorization(e.to_string()))?;
    Ok([sol[0], sol[1], sol[2]])
}

/// Compares the curvature of the grid log posterior around `root` (within
/// `|theta - root| <= window`) with `-1 / hessian`, where `hessian` is the
/// derivative of the per-observation score `M_n` at the root.
///
/// The posterior of `t = sqrt(n)(theta - root)` is close to `N(0, Delta)`,
/// so the fitted second derivative of the log density is `-n / Delta_hat`.
pub fn local_shape_check(
    post: &GridPosterior,
    root: f64,
    window: f64,
    n: usize,
    hessian: f64,
) -> Result<ShapeCheck> {
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (&t, &lu) in post.grid.iter().zip(&post.log_unnorm) {
        if (t - root).abs() <= window && lu.is_finite() {
            xs.push(t - root);
            ys.push(lu);
        }
    }
    if xs.len() < 5 {
        return Err(Error::InsufficientResolution {
            points: xs.len(),
            required: 5,
        });
    }
    if !(hessian < 0.0) {
        return Err(Error::NotAMax);
    }
    let c = quadratic_fit(&xs, &ys)?;
    let delta_hat = -(n as f64) / (2.0 * c[2]);
    let delta = -1.0 / hessian;
    Ok(ShapeCheck {
        delta_hat,
        delta,
        discrepancy: (delta_hat - delta).abs() / delta,
    })
}

/// `int |t| |p(t) - N(t; 0, delta)| dt` for `t = sqrt(n)(theta - center)`,
/// evaluated on the posterior grid.
pub fn bvm_distance(post: &GridPosterior, center: f64, n: usize, delta: f64) -> f64 {
    let rn = (n as f64).sqrt();
    let norm = 1.0 / (2.0 * std::f64::consts::PI * delta).sqrt();
    let integrand: Vec<f64> = post
        .grid
        .iter()
        .zip(&post.density)
        .map(|(&th, &d)| {
            let t = rn * (th - center);
            let phi = norm * (-0.5 * t * t / delta).exp();
            t.abs() * (d / rn - phi).abs() * rn
        })
        .collect();
    trapezoid(&post.grid, &integrand)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SandwichReport {
    pub delta: DMatrix<f64>,
    pub w_star: DMatrix<f64>,
    pub sandwich: DMatrix<f64>,
}

/// `Delta = (-H)^-1`, `W = G' Sigma^-1 V Sigma^-1 G` and `Delta W Delta'`.
pub fn sandwich_variance(
    g: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    v: &DMatrix<f64>,
    h: &DMatrix<f64>,
) -> Result<SandwichReport> {
    let neg_h = -h;
    let ch_h = cholesky(&neg_h).map_err(|_| Error::NotAMax)?;
    let p = h.nrows();
    let delta = ch_h.solve(&DMatrix::identity(p, p));
    let ch_s = cholesky(sigma)?;
    let sig_g = ch_s.solve(g);
    let w_star = sig_g.transpose() * v * &sig_g;
    let w_star = 0.5 * (&w_star + w_star.transpose());
    let sandwich = &delta * &w_star * delta.transpose();
    let sandwich = 0.5 * (&sandwich + sandwich.transpose());
    Ok(SandwichReport {
        delta,
        w_star,
        sandwich,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanRow {
    pub theta: f64,
    pub log_sl: f64,
    pub score: f64,
    pub hessian: f64,
    pub is_mode: bool,
}

/// Log-SL, score and Hessian over a grid inside `|theta| < 0.999`; the grid
/// points nearest each local-maximum root are flagged as modes.
pub fn hessian_scan(s_obs: &DVector<f64>, n: usize, grid: &[f64]) -> Result<Vec<ScanRow>> {
    let sl = ExactMa1SL::new(n)?;
    let mut rows = grid
        .iter()
        .map(|&t| {
            let r = sl_score_ma1(t, s_obs, n)?;
            Ok(ScanRow {
                theta: t,
                log_sl: sl.loglik(t, s_obs)?,
                score: r.score,
                hessian: r.hessian,
                is_mode: false,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    for r in ma1_roots(s_obs, n, grid)?.roots.iter().filter(|r| r.is_local_max) {
        let i = grid
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - r.theta).abs().total_cmp(&(b.1 - r.theta).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        rows[i].is_mode = true;
    }
    Ok(rows)
}

pub fn scan_to_csv(rows: &[ScanRow]) -> String {
    let mut t = CsvTable::new(&["theta", "log_sl", "score", "hessian", "is_mode"]);
    for r in rows {
        t.row(&[
            fmt_f64(r.theta),
            fmt_f64(r.log_sl),
            fmt_f64(r.score),
            fmt_f64(r.hessian),
            if r.is_mode { "1" } else { "0" }.to_string(),
        ]);
    }
    t.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posterior::{flat_log_prior, grid_posterior, uniform_grid};

    fn s(v0: f64, v1: f64) -> DVector<f64> {
        DVector::from_vec(vec![v0, v1])
    }

    fn fd_score(theta: f64, s_obs: &DVector<f64>, n: usize) -> f64 {
        let sl = ExactMa1SL::new(n).unwrap();
        let h = fd_step(theta);
        (sl.loglik(theta + h, s_obs).unwrap() - sl.loglik(theta - h, s_obs).unwrap())
            / (2.0 * h * n as f64)
    }

    #[test]
    fn score_matches_finite_differences() {
        let so = s(0.5, 0.0);
        let r = sl_score_ma1(0.4, &so, 1000).unwrap();
        let fd = fd_score(0.4, &so, 1000);
        assert!(((r.score - fd) / fd).abs() < 1e-5, "{} vs {fd}", r.score);
    }

    #[test]
    fn unit_trace_scaling_departs_from_finite_differences() {
        let so = s(0.5, 0.1);
        let r = sl_score_ma1_with(0.4, &so, 1000, TraceScaling::Unit).unwrap();
        let fd = fd_score(0.4, &so, 1000);
        assert!(((r.score - fd) / fd).abs() > 1e-3);
    }

    #[test]
    fn score_is_odd_for_symmetric_summaries() {
        let so = s(0.3, 0.0);
        for t in [0.1, 0.37, 0.8] {
            let a = sl_score_ma1(t, &so, 500).unwrap().score;
            let b = sl_score_ma1(-t, &so, 500).unwrap().score;
            assert!((a + b).abs() < 1e-10);
        }
    }

    #[test]
    fn compatible_score_vanishes_with_n() {
        let theta = 0.4;
        let so = ma1_mean(theta);
        let v = sl_score_ma1(theta, &so, 1_000_000).unwrap().score;
        assert!(v.abs() < 1e-4, "{v}");
    }

    #[test]
    fn rejects_edge() {
        assert!(sl_score_ma1(0.999, &s(0.5, 0.0), 100).is_err());
    }

    #[test]
    fn roots_in_the_two_regimes() {
        let grid = uniform_grid(-0.99, 0.99, 199);
        let uni = ma1_roots(&s(0.99, 0.0), 1000, &grid).unwrap();
        assert_eq!(uni.local_maxima().len(), 1);
        assert!(uni.local_maxima()[0].abs() < 0.05);
        let bi = ma1_roots(&s(0.25, 0.0), 1000, &grid).unwrap();
        let m = bi.local_maxima();
        assert!(m.len() >= 2);
        assert!((m[0] + m[m.len() - 1]).abs() < 1e-8 && m[0] < -0.1);
        for r in &bi.roots {
            assert!(sl_score_ma1(r.theta, &s(0.25, 0.0), 1000).unwrap().score.abs() < 1e-8);
        }
    }

    #[test]
    fn no_sign_change_is_flagged() {
        let rs = find_roots(|t| Ok(t + 5.0), &uniform_grid(-1.0, 1.0, 11)).unwrap();
        assert!(rs.no_sign_change && rs.roots.is_empty());
    }

    #[test]
    fn shape_check_on_exact_gaussian() {
        let grid = uniform_grid(-1.0, 1.0, 2001);
        let n = 1000;
        let delta = 0.7;
        let p = grid_posterior(|t| -0.5 * n as f64 * (t - 0.1).powi(2) / delta, flat_log_prior, &grid)
            .unwrap();
        let c = local_shape_check(&p, 0.1, 0.05, n, -1.0 / delta).unwrap();
        assert!(c.discrepancy < 1e-4);
        assert!(matches!(
            local_shape_check(&p, 0.1, 0.001, n, -1.0 / delta),
            Err(Error::InsufficientResolution { .. })
        ));
    }

    #[test]
    fn sandwich_examples() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let r = sandwich_variance(&one, &one, &DMatrix::from_element(1, 1, 4.0), &(-&one)).unwrap();
        assert_eq!((r.delta[(0, 0)], r.w_star[(0, 0)], r.sandwich[(0, 0)]), (1.0, 4.0, 4.0));
        let g = DMatrix::from_row_slice(3, 2, &[1.0, 0.2, 0.5, 1.0, -0.3, 0.4]);
        let sig = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.0, 0.2, 0.1, 0.2, 1.5]);
        let h = -(g.transpose() * cholesky(&sig).unwrap().solve(&g));
        let r = sandwich_variance(&g, &sig, &sig, &h).unwrap();
        assert!((&r.sandwich - &r.delta).amax() < 1e-12);
        assert_eq!(sandwich_variance(&one, &one, &one, &one), Err(Error::NotAMax));
    }

    #[test]
    fn hessian_scan_consistency() {
        let grid = uniform_grid(-0.99, 0.99, 397);
        let so = s(0.25, 0.0);
        let rows = hessian_scan(&so, 1000, &grid).unwrap();
        let flagged: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].is_mode).collect();
        let post = grid_posterior(
            |t| ExactMa1SL::new(1000).unwrap().loglik(t, &so).unwrap(),
            flat_log_prior,
            &grid,
        )
        .unwrap();
        assert_eq!(flagged, post.mode_indices());
        let h = grid[1] - grid[0];
        for i in 1..rows.len() - 1 {
            assert_eq!(rows[i].hessian, rows[rows.len() - 1 - i].hessian);
            let fd = (rows[i + 1].log_sl - 2.0 * rows[i].log_sl + rows[i - 1].log_sl) / (h * h * 1000.0);
            let rel = ((fd - rows[i].hessian) / rows[i].hessian).abs();
            assert!(rel < 5e-3 || (fd - rows[i].hessian).abs() < 1e-3, "{i}: {fd} {}", rows[i].hessian);
        }
        assert!(scan_to_csv(&rows).starts_with("theta,log_sl,score,hessian,is_mode\n"));
    }
}
