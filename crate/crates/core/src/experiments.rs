//! Experiment drivers. Each takes a plain config (seeded, serde-friendly)
//! and returns its metrics together with the CSV artifacts it produced,
//! keyed by file name.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjust::{adjust_sample, estimate_w, mean_gradient_fd, naive_grid_posterior, TransformVariant};
use crate::asymptotics::{
    bvm_distance, fd_step, find_roots, hessian_scan, local_shape_check, ma1_limit_hessian, ma1_roots,
    sandwich_variance, scan_to_csv, sl_score_ma1, ShapeCheck,
};
use crate::csv::{fmt_f64, CsvTable, LongTable};
use crate::diagnostics::{
    bootstrap_variance_check, chain_ppc, coverage_experiment, gamma_departure, kldn_report,
    BootVarEntry, CoverageConfig, CoverageTable, GammaDeparture, KldnEntry, PpcReport,
};
use crate::error::{domain, Result};
use crate::models::{simulate_gk, simulate_ma1, simulate_sv, GkModel, GkParams, Ma1Model, Ma1Params, Model, SvParams, TimeSeries};
use crate::posterior::{
    box_log_prior, bsl_rwmh, bsl_rwmh_with, from_log_unnorm, ma1_grid, rbsl_mh, rejection_abc,
    uniform_grid, Chain, GammaPrior, GridPosterior, InflationRoot, McmcConfig, SlCovariance,
};
use crate::rng::{derive_seed, derive_seed_path};
use crate::stats;
use crate::summaries::{autocov, block_bootstrap_cov, BootstrapSpec};
use crate::synthlik::{estimate_sl, ma1_mean, temper_logpdf, ExactMa1SL};

/// Artifact file name to contents.
pub type Artifacts = BTreeMap<String, String>;

/// Half-width of the central region used for the "mass near zero" summary.
pub const CENTER_HALF_WIDTH: f64 = 0.2;

fn sv_params(omega: f64, rho: f64, sigma_v: f64) -> Result<SvParams> {
    SvParams::new(omega, rho, sigma_v)
}

fn s0_tag(s0: f64) -> String {
    format!("{s0:?}")
}

/// Exact MA(1) log SL over a grid, flat prior.
pub fn exact_log_sl(s_obs: &DVector<f64>, n: usize, grid: &[f64]) -> Result<Vec<f64>> {
    let sl = ExactMa1SL::new(n)?;
    grid.iter().map(|&t| sl.loglik(t, s_obs)).collect()
}

pub fn exact_posterior(s_obs: &DVector<f64>, n: usize, grid: &[f64]) -> Result<GridPosterior> {
    from_log_unnorm(grid, exact_log_sl(s_obs, n, grid)?)
}

/// Local-max root of the exact score nearest to `mode`, with its Hessian.
fn nearest_root(s_obs: &DVector<f64>, n: usize, mode: f64) -> Result<Option<(f64, f64)>> {
    let roots = ma1_roots(s_obs, n, &uniform_grid(-0.998, 0.998, 999))?;
    Ok(roots
        .roots
        .iter()
        .filter(|r| r.is_local_max)
        .min_by(|a, b| (a.theta - mode).abs().total_cmp(&(b.theta - mode).abs()))
        .map(|r| (r.theta, r.hessian)))
}

/// Quadratic-fit window: two local standard deviations, at least five cells.
fn shape_at(post: &GridPosterior, s_obs: &DVector<f64>, n: usize, mode: f64) -> Result<Option<ShapeCheck>> {
    let Some((root, _)) = nearest_root(s_obs, n, mode)? else {
        return Ok(None);
    };
    let hess = sl_score_ma1(root, s_obs, n)?.hessian;
    if !(hess < 0.0) {
        return Ok(None);
    }
    let cell = post.grid[1] - post.grid[0];
    let window = (2.0 * (-1.0 / hess / n as f64).sqrt()).max(5.0 * cell);
    local_shape_check(post, root, window, n, hess).map(Some)
}

// ---------------------------------------------------------------------------
// exact posteriors over a range of S0

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExactPosteriorConfig {
    pub s0: Vec<f64>,
    pub s1: f64,
    pub n: Vec<usize>,
    pub grid_lo: f64,
    pub grid_hi: f64,
    pub grid_points: usize,
}

impl Default for ExactPosteriorConfig {
    fn default() -> Self {
        Self {
            s0: vec![0.01, 0.1, 0.25, 0.5, 0.75, 0.99],
            s1: 0.0,
            n: vec![100, 500, 1000],
            grid_lo: -0.999,
            grid_hi: 0.999,
            grid_points: 2001,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeRow {
    pub s0: f64,
    pub n: usize,
    pub mode_cells: Vec<usize>,
    pub modes: Vec<f64>,
    pub center_mass: f64,
    /// One entry per mode; `None` when no local-max root is nearby.
    pub shape: Vec<Option<ShapeCheck>>,
}

#[derive(Debug, Clone)]
pub struct ExactPosteriorReport {
    pub grid_points: usize,
    pub rows: Vec<RegimeRow>,
    pub artifacts: Artifacts,
}

impl ExactPosteriorReport {
    pub fn row(&self, s0: f64, n: usize) -> Option<&RegimeRow> {
        self.rows.iter().find(|r| r.s0 == s0 && r.n == n)
    }
}

pub fn run_exact_posterior(cfg: &ExactPosteriorConfig) -> Result<ExactPosteriorReport> {
    let grid = uniform_grid(cfg.grid_lo, cfg.grid_hi, cfg.grid_points);
    let mut rows = Vec::new();
    let mut artifacts = Artifacts::new();
    let mut summary = LongTable::default();
    for &n in &cfg.n {
        for &s0 in &cfg.s0 {
            let s_obs = DVector::from_vec(vec![s0, cfg.s1]);
            let post = exact_posterior(&s_obs, n, &grid)?;
            let cells = post.significant_mode_indices();
            let modes: Vec<f64> = cells.iter().map(|&i| grid[i]).collect();
            let shape = modes
                .iter()
                .map(|&m| shape_at(&post, &s_obs, n, m))
                .collect::<Result<Vec<_>>>()?;
            let center_mass = post.mass_between(-CENTER_HALF_WIDTH, CENTER_HALF_WIDTH);
            let method = format!("s0={}", s0_tag(s0));
            summary.push("exact-posterior", &method, n, "n_modes", modes.len() as f64);
            for (k, (&m, sh)) in modes.iter().zip(&shape).enumerate() {
                summary.push("exact-posterior", &method, n, &format!("mode{}", k + 1), m);
                if let Some(sh) = sh {
                    summary.push("exact-posterior", &method, n, &format!("shape_discrepancy{}", k + 1), sh.discrepancy);
                }
            }
            summary.push("exact-posterior", &method, n, "center_mass", center_mass);
            artifacts.insert(format!("exact_posterior_s0_{}_n{n}.csv", s0_tag(s0)), post.to_csv());
            rows.push(RegimeRow {
                s0,
                n,
                mode_cells: cells,
                modes,
                center_mass,
                shape,
            });
        }
    }
    artifacts.insert("exact_posterior_summary.csv".into(), summary.finish());
    Ok(ExactPosteriorReport {
        grid_points: grid.len(),
        rows,
        artifacts,
    })
}

// ---------------------------------------------------------------------------
// exact and tempered posteriors on replicated SV data

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvReplicationConfig {
    pub replications: usize,
    pub n: usize,
    pub omega: f64,
    pub rho: f64,
    pub sigma_v: f64,
    pub alpha: f64,
    pub grid_points: usize,
    pub seed: u64,
}

impl Default for SvReplicationConfig {
    fn default() -> Self {
        Self {
            replications: 50,
            n: 1000,
            omega: -0.736,
            rho: 0.90,
            sigma_v: 0.36,
            alpha: 0.5,
            grid_points: 2001,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvReplicationRow {
    pub replication: usize,
    pub s_obs: [f64; 2],
    pub modes: Vec<f64>,
    pub center_mass: f64,
    pub tempered_modes: Vec<f64>,
    pub same_argmax: bool,
    pub same_local_maxima: bool,
}

impl SvReplicationRow {
    /// Two modes and less than 10% of the mass near zero.
    pub fn bimodal(&self) -> bool {
        self.modes.len() == 2 && self.center_mass < 0.1
    }
}

#[derive(Debug, Clone)]
pub struct SvReplicationReport {
    pub rows: Vec<SvReplicationRow>,
    pub artifacts: Artifacts,
}

impl SvReplicationReport {
    pub fn bimodal_fraction(&self) -> f64 {
        self.rows.iter().filter(|r| r.bimodal()).count() as f64 / self.rows.len() as f64
    }
}

pub fn run_sv_replications(cfg: &SvReplicationConfig) -> Result<SvReplicationReport> {
    let sv = sv_params(cfg.omega, cfg.rho, cfg.sigma_v)?;
    let grid = uniform_grid(-0.999, 0.999, cfg.grid_points);
    let results = (0..cfg.replications)
        .into_par_iter()
        .map(|r| -> Result<(SvReplicationRow, GridPosterior, GridPosterior)> {
            let y = simulate_sv(&sv, cfg.n, derive_seed_path(cfg.seed, &format!("sv/rep{r}")))?;
            let s_obs = autocov(y.values(), &[0, 1])?;
            let log_sl = exact_log_sl(&s_obs, cfg.n, &grid)?;
            let tempered = log_sl
                .iter()
                .map(|&l| temper_logpdf(l, cfg.alpha))
                .collect::<Result<Vec<_>>>()?;
            let post = from_log_unnorm(&grid, log_sl)?;
            let temp = from_log_unnorm(&grid, tempered)?;
            let row = SvReplicationRow {
                replication: r,
                s_obs: [s_obs[0], s_obs[1]],
                modes: post.modes(),
                center_mass: post.mass_between(-CENTER_HALF_WIDTH, CENTER_HALF_WIDTH),
                tempered_modes: temp.modes(),
                same_argmax: post.argmax_indices() == temp.argmax_indices(),
                same_local_maxima: post.mode_indices() == temp.mode_indices(),
            };
            Ok((row, post, temp))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut artifacts = Artifacts::new();
    let mut table = CsvTable::new(&[
        "replication",
        "s0",
        "s1",
        "n_modes",
        "mode_lo",
        "mode_hi",
        "center_mass",
        "bimodal",
        "same_argmax",
        "same_local_maxima",
    ]);
    let mut rows = Vec::new();
    for (row, post, temp) in results {
        let lo = row.modes.first().copied().unwrap_or(f64::NAN);
        let hi = row.modes.last().copied().unwrap_or(f64::NAN);
        table.row(&[
            row.replication.to_string(),
            fmt_f64(row.s_obs[0]),
            fmt_f64(row.s_obs[1]),
            row.modes.len().to_string(),
            fmt_f64(lo),
            fmt_f64(hi),
            fmt_f64(row.center_mass),
            u8::from(row.bimodal()).to_string(),
            u8::from(row.same_argmax).to_string(),
            u8::from(row.same_local_maxima).to_string(),
        ]);
        artifacts.insert(format!("exact_rep{:03}.csv", row.replication), post.to_csv());
        artifacts.insert(format!("tempered_rep{:03}.csv", row.replication), temp.to_csv());
        rows.push(row);
    }
    artifacts.insert("sv_replications.csv".into(), table.finish());
    Ok(SvReplicationReport { rows, artifacts })
}

// ---------------------------------------------------------------------------
// robust BSL on SV data

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RbslConfig {
    pub n: Vec<usize>,
    pub m: usize,
    pub n_iter: usize,
    /// Adaptive burn-in length; zero keeps every draw from `theta = 0`.
    pub burn_in: usize,
    pub proposal_sd: f64,
    pub gamma_prior_mean: f64,
    pub inflation_root: InflationRoot,
    pub omega: f64,
    pub rho: f64,
    pub sigma_v: f64,
    pub seed: u64,
}

impl Default for RbslConfig {
    fn default() -> Self {
        Self {
            n: vec![100, 500, 1000],
            m: 10,
            n_iter: 50_000,
            burn_in: 0,
            proposal_sd: 0.1,
            gamma_prior_mean: 0.5,
            inflation_root: InflationRoot::Symmetric,
            omega: -0.736,
            rho: 0.90,
            sigma_v: 0.36,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RbslRow {
    pub n: usize,
    pub mean: f64,
    pub modes: Vec<f64>,
    pub acceptance_rate: f64,
    pub gamma_means: Vec<f64>,
    pub failed_proposals: usize,
}

#[derive(Debug, Clone)]
pub struct RbslReport {
    pub rows: Vec<RbslRow>,
    pub artifacts: Artifacts,
}

pub fn run_rbsl(cfg: &RbslConfig) -> Result<RbslReport> {
    let sv = sv_params(cfg.omega, cfg.rho, cfg.sigma_v)?;
    let model = Ma1Model::default();
    let bounds = [(-1.0, 1.0)];
    let prior = box_log_prior(&bounds);
    let gp = GammaPrior {
        mean: cfg.gamma_prior_mean,
        root: cfg.inflation_root,
        ..GammaPrior::default()
    };
    let chains = cfg
        .n
        .par_iter()
        .map(|&n| -> Result<(usize, Chain)> {
            let y = simulate_sv(&sv, n, derive_seed_path(cfg.seed, &format!("rbsl/n{n}/data")))?;
            let s_obs = autocov(y.values(), &model.lags)?;
            let mc = McmcConfig::new(
                cfg.n_iter,
                vec![0.0],
                vec![cfg.proposal_sd],
                derive_seed_path(cfg.seed, &format!("rbsl/n{n}/chain")),
            )
            .with_burn_in(cfg.burn_in, cfg.burn_in > 0);
            Ok((n, rbsl_mh(&model, &prior, &s_obs, cfg.m, n, &mc, &gp)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut artifacts = Artifacts::new();
    let mut summary = LongTable::default();
    let mut rows = Vec::new();
    for (n, chain) in chains {
        let theta: Vec<f64> = chain.kept().iter().map(|d| d[0]).collect();
        let modes = stats::sample_modes(&theta)?;
        let gamma_means: Vec<f64> = (0..model.summary_dim())
            .map(|j| stats::mean(&chain.gamma_column(j).unwrap_or_default()))
            .collect();
        let row = RbslRow {
            n,
            mean: stats::mean(&theta),
            modes,
            acceptance_rate: chain.acceptance_rate,
            gamma_means,
            failed_proposals: chain.failed_proposals,
        };
        summary.push("rbsl", "r-BSL", n, "mean", row.mean);
        summary.push("rbsl", "r-BSL", n, "n_modes", row.modes.len() as f64);
        summary.push("rbsl", "r-BSL", n, "acceptance_rate", row.acceptance_rate);
        for (j, g) in row.gamma_means.iter().enumerate() {
            summary.push("rbsl", "r-BSL", n, &format!("gamma{}_mean", j + 1), *g);
        }
        artifacts.insert(format!("rbsl_chain_n{n}.csv"), chain.to_csv());
        rows.push(row);
    }
    artifacts.insert("rbsl_summary.csv".into(), summary.finish());
    Ok(RbslReport { rows, artifacts })
}

// ---------------------------------------------------------------------------
// naive versus adjusted BSL coverage

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoverageSettings {
    pub sample_sizes: Vec<usize>,
    pub replications: usize,
    pub omega: f64,
    pub rho: f64,
    pub sigma_v: f64,
    pub n_draws: usize,
    pub block_len: usize,
    pub n_boot: usize,
    pub literal_transform: bool,
    pub level: f64,
    pub target: f64,
    pub seed: u64,
}

impl Default for CoverageSettings {
    fn default() -> Self {
        let c = CoverageConfig::new(1);
        Self {
            sample_sizes: c.sample_sizes,
            replications: c.replications,
            omega: -0.736,
            rho: 0.90,
            sigma_v: 0.36,
            n_draws: c.n_draws,
            block_len: c.block_len,
            n_boot: c.n_boot,
            literal_transform: false,
            level: c.level,
            target: c.target,
            seed: c.seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CoverageReport {
    pub table: CoverageTable,
    pub artifacts: Artifacts,
}

pub fn run_coverage(cfg: &CoverageSettings) -> Result<CoverageReport> {
    let cc = CoverageConfig {
        sample_sizes: cfg.sample_sizes.clone(),
        replications: cfg.replications,
        sv: sv_params(cfg.omega, cfg.rho, cfg.sigma_v)?,
        n_draws: cfg.n_draws,
        block_len: cfg.block_len,
        n_boot: cfg.n_boot,
        variant: if cfg.literal_transform {
            TransformVariant::Literal
        } else {
            TransformVariant::Sandwich
        },
        level: cfg.level,
        target: cfg.target,
        seed: cfg.seed,
    };
    let table = coverage_experiment(&cc);
    let mut artifacts = Artifacts::new();
    artifacts.insert("coverage_table.csv".into(), table.summary_csv());
    artifacts.insert("coverage_replications.csv".into(), table.replications_csv());
    Ok(CoverageReport { table, artifacts })
}

// ---------------------------------------------------------------------------
// large-sample checks for the MA(1) SL

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BvmConfig {
    /// `(S0, S1, n)` triples for the score and root checks.
    pub settings: Vec<(f64, f64, usize)>,
    pub score_grid_points: usize,
    pub brute_points: usize,
    /// Observed summaries for the shape-convergence check.
    pub shape_s_obs: (f64, f64),
    pub shape_n: Vec<usize>,
    pub shape_grid_points: usize,
    pub sandwich_replications: usize,
    pub sandwich_n: usize,
    pub omega: f64,
    pub rho: f64,
    pub sigma_v: f64,
    pub block_len: usize,
    pub n_boot: usize,
    pub seed: u64,
}

impl Default for BvmConfig {
    fn default() -> Self {
        Self {
            settings: vec![(0.5, 0.0, 1000), (0.25, 0.1, 500), (0.99, 0.05, 4000)],
            score_grid_points: 99,
            // odd, so a maximum at zero lies on the grid
            brute_points: 100_001,
            shape_s_obs: (0.99, 0.0),
            shape_n: vec![500, 1000, 4000],
            shape_grid_points: 8001,
            sandwich_replications: 200,
            sandwich_n: 1000,
            omega: -0.736,
            rho: 0.90,
            sigma_v: 0.36,
            block_len: 10,
            n_boot: 500,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreCheckRow {
    pub setting: usize,
    pub theta: f64,
    pub score: f64,
    pub fd: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RootCheck {
    pub setting: usize,
    pub roots: Vec<f64>,
    pub brute_maxima: Vec<f64>,
    pub brute_spacing: f64,
    /// Largest distance between a local-max root and its brute-force match,
    /// infinite when the counts differ.
    pub max_gap: f64,
}

#[derive(Debug, Clone)]
pub struct BvmReport {
    pub score_rows: Vec<ScoreCheckRow>,
    pub roots: Vec<RootCheck>,
    /// `(n, distance)` pairs in the configured order.
    pub shape_distances: Vec<(usize, f64)>,
    /// Limit sandwich `Delta W Delta` for the naive posterior mean.
    pub sandwich: f64,
    /// Mean over replications of the bootstrap-based sandwich.
    pub sandwich_bootstrap: f64,
    /// `n` times the replication variance of the naive posterior mean.
    pub replication_variance: f64,
    pub artifacts: Artifacts,
}

impl BvmReport {
    pub fn max_rel_err(&self) -> f64 {
        self.score_rows.iter().map(|r| r.rel_err).fold(0.0, f64::max)
    }

    pub fn shape_decreasing(&self) -> bool {
        self.shape_distances.windows(2).all(|w| w[1].1 < w[0].1)
    }

    pub fn sandwich_ratio(&self) -> f64 {
        self.sandwich / self.replication_variance
    }
}

/// Central difference of the per-observation log SL with the Hessian step.
fn log_sl_derivative(sl: &ExactMa1SL, theta: f64, s_obs: &DVector<f64>) -> Result<f64> {
    let h = fd_step(theta);
    let d = (sl.loglik(theta + h, s_obs)? - sl.loglik(theta - h, s_obs)?) / (2.0 * h);
    Ok(d / sl.n as f64)
}

/// Denominator floor for score relative errors; at an exact root both the
/// score and its finite difference are rounding noise.
pub const SCORE_FLOOR: f64 = 1e-6;

/// Strict interior local maxima of a sequence.
fn argrelmax(y: &[f64]) -> Vec<usize> {
    (1..y.len().saturating_sub(1))
        .filter(|&i| y[i] > y[i - 1] && y[i] > y[i + 1])
        .collect()
}

/// `E[y_t^2 y_{t-1}^2]`, the long-run variance of the lag-one
/// autocovariance of SV returns (a martingale difference sequence).
pub fn sv_lag1_long_run_variance(sv: &SvParams) -> f64 {
    let (mu, var) = sv.stationary_log_vol();
    (2.0 * mu + var * (1.0 + sv.rho())).exp()
}

pub fn run_bvm_check(cfg: &BvmConfig) -> Result<BvmReport> {
    let mut artifacts = Artifacts::new();
    let mut summary = LongTable::default();

    // score against differentiated log SL
    let score_grid = uniform_grid(-0.97, 0.97, cfg.score_grid_points);
    let mut score_rows = Vec::new();
    let mut roots = Vec::new();
    for (k, &(s0, s1, n)) in cfg.settings.iter().enumerate() {
        let s_obs = DVector::from_vec(vec![s0, s1]);
        let sl = ExactMa1SL::new(n)?;
        for &t in &score_grid {
            let score = sl_score_ma1(t, &s_obs, n)?.score;
            let fd = log_sl_derivative(&sl, t, &s_obs)?;
            score_rows.push(ScoreCheckRow {
                setting: k,
                theta: t,
                score,
                fd,
                rel_err: (score - fd).abs() / fd.abs().max(SCORE_FLOOR),
            });
        }
        let brute_grid = uniform_grid(-0.998, 0.998, cfg.brute_points);
        let ll = exact_log_sl(&s_obs, n, &brute_grid)?;
        let brute_maxima: Vec<f64> = argrelmax(&ll).into_iter().map(|i| brute_grid[i]).collect();
        let found = find_roots(
            |t| sl_score_ma1(t, &s_obs, n).map(|r| r.score),
            &uniform_grid(-0.998, 0.998, 999),
        )?
        .local_maxima();
        let max_gap = if found.len() == brute_maxima.len() {
            found
                .iter()
                .zip(&brute_maxima)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        } else {
            f64::INFINITY
        };
        roots.push(RootCheck {
            setting: k,
            roots: found,
            brute_maxima,
            brute_spacing: brute_grid[1] - brute_grid[0],
            max_gap,
        });
    }
    let mut t = CsvTable::new(&["setting", "theta", "score", "fd", "rel_err"]);
    for r in &score_rows {
        t.row(&[r.setting.to_string(), fmt_f64(r.theta), fmt_f64(r.score), fmt_f64(r.fd), fmt_f64(r.rel_err)]);
    }
    artifacts.insert("bvm_score_fd.csv".into(), t.finish());
    let mut t = CsvTable::new(&["setting", "source", "theta"]);
    for r in &roots {
        for &x in &r.roots {
            t.row(&[r.setting.to_string(), "root".into(), fmt_f64(x)]);
        }
        for &x in &r.brute_maxima {
            t.row(&[r.setting.to_string(), "argrelmax".into(), fmt_f64(x)]);
        }
    }
    artifacts.insert("bvm_roots.csv".into(), t.finish());

    // local Gaussian shape over n
    let s_obs = DVector::from_vec(vec![cfg.shape_s_obs.0, cfg.shape_s_obs.1]);
    let shape_grid = uniform_grid(-0.999, 0.999, cfg.shape_grid_points);
    let mut shape_distances = Vec::new();
    for &n in &cfg.shape_n {
        let post = exact_posterior(&s_obs, n, &shape_grid)?;
        let center = match nearest_root(&s_obs, n, post.mean())? {
            Some((r, _)) => r,
            None => return Err(domain("no local maximum of the SL in the shape check")),
        };
        let h = ma1_limit_hessian(center, &s_obs)?;
        let dist = bvm_distance(&post, center, n, -1.0 / h);
        summary.push("bvm-check", "shape", n, "distance", dist);
        shape_distances.push((n, dist));
    }

    // repeated-sampling variance of the naive posterior mean on SV data
    let sv = sv_params(cfg.omega, cfg.rho, cfg.sigma_v)?;
    let n = cfg.sandwich_n;
    let b0 = sv.summary_limit();
    let hess = DMatrix::from_element(1, 1, 2.0 * (b0[0] - 1.0) - 1.0);
    let g = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
    let ident = DMatrix::identity(2, 2);
    let v_limit = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, sv_lag1_long_run_variance(&sv)]));
    let sandwich = sandwich_variance(&g, &ident, &v_limit, &hess)?.sandwich[(0, 0)];
    let grid = ma1_grid();
    let reps = (0..cfg.sandwich_replications)
        .into_par_iter()
        .map(|r| -> Result<(f64, f64)> {
            let seed = derive_seed_path(cfg.seed, &format!("bvm/sandwich/rep{r}"));
            let y = simulate_sv(&sv, n, derive_seed_path(seed, "data"))?;
            let s = autocov(y.values(), &[0, 1])?;
            let post = naive_grid_posterior(ma1_mean, |_| 0.0, &s, n, None, &grid)?;
            let spec = BootstrapSpec::new(cfg.block_len, cfg.n_boot, derive_seed_path(seed, "bootstrap"))?;
            let v = block_bootstrap_cov(y.values(), |x: &[f64]| autocov(x, &[0, 1]), &spec)? * n as f64;
            let sw = sandwich_variance(&g, &ident, &v, &hess)?.sandwich[(0, 0)];
            Ok((post.mean(), sw))
        })
        .collect::<Result<Vec<_>>>()?;
    let means: Vec<f64> = reps.iter().map(|r| r.0).collect();
    let replication_variance = n as f64 * stats::variance(&means);
    let sandwich_bootstrap = stats::mean(&reps.iter().map(|r| r.1).collect::<Vec<_>>());
    let mut t = CsvTable::new(&["replication", "posterior_mean", "bootstrap_sandwich"]);
    for (r, (m, sw)) in reps.iter().enumerate() {
        t.row(&[r.to_string(), fmt_f64(*m), fmt_f64(*sw)]);
    }
    artifacts.insert("bvm_sandwich_replications.csv".into(), t.finish());

    let report = BvmReport {
        score_rows,
        roots,
        shape_distances,
        sandwich,
        sandwich_bootstrap,
        replication_variance,
        artifacts: Artifacts::new(),
    };
    for r in &report.roots {
        summary.push("bvm-check", &format!("setting{}", r.setting), cfg.settings[r.setting].2, "root_gap", r.max_gap);
    }
    summary.push("bvm-check", "score", 0, "max_rel_err", report.max_rel_err());
    summary.push("bvm-check", "sandwich", n, "limit", report.sandwich);
    summary.push("bvm-check", "sandwich", n, "bootstrap_mean", report.sandwich_bootstrap);
    summary.push("bvm-check", "sandwich", n, "replication_variance", report.replication_variance);
    artifacts.insert("bvm_summary.csv".into(), summary.finish());
    Ok(BvmReport { artifacts, ..report })
}

// ---------------------------------------------------------------------------
// SL criterion scan

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HessianScanConfig {
    pub s0: f64,
    pub s1: f64,
    pub n: usize,
    pub grid_points: usize,
}

impl Default for HessianScanConfig {
    fn default() -> Self {
        Self {
            s0: 0.1,
            s1: 0.0,
            n: 1000,
            grid_points: 999,
        }
    }
}

pub fn run_hessian_scan(cfg: &HessianScanConfig) -> Result<Artifacts> {
    let s_obs = DVector::from_vec(vec![cfg.s0, cfg.s1]);
    let rows = hessian_scan(&s_obs, cfg.n, &uniform_grid(-0.998, 0.998, cfg.grid_points))?;
    let mut a = Artifacts::new();
    a.insert("hessian_scan.csv".into(), scan_to_csv(&rows));
    Ok(a)
}

// ---------------------------------------------------------------------------
// estimated versus exact SL

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatedSlConfig {
    pub theta: f64,
    pub n: usize,
    pub m: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
}

impl Default for EstimatedSlConfig {
    fn default() -> Self {
        Self {
            theta: 0.3,
            n: 200,
            m: vec![200, 400],
            replicates: 5000,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EstimatedSlReport {
    pub exact_log_sl: f64,
    /// `(m, |mean exp(l_hat - l) - 1|)` in the configured order.
    pub rel_errors: Vec<(usize, f64)>,
    pub artifacts: Artifacts,
}

pub fn run_estimated_sl(cfg: &EstimatedSlConfig) -> Result<EstimatedSlReport> {
    let model = Ma1Model::default();
    let y = simulate_ma1(&Ma1Params::new(cfg.theta)?, cfg.n, derive_seed_path(cfg.seed, "estimated-sl/data"))?;
    let s_obs = autocov(y.values(), &model.lags)?;
    let exact = ExactMa1SL::new(cfg.n)?.loglik(cfg.theta, &s_obs)?;
    let mut summary = LongTable::default();
    let mut reps_table = CsvTable::new(&["m", "replicate", "log_sl"]);
    let mut rel_errors = Vec::new();
    for &m in &cfg.m {
        // replicate r uses the same simulation stream at every m, so the
        // first m of the 2m simulations are shared
        let base = derive_seed_path(cfg.seed, "estimated-sl/replicates");
        let vals = (0..cfg.replicates)
            .into_par_iter()
            .map(|r| estimate_sl(&model, &[cfg.theta], m, cfg.n, derive_seed(base, r as u64))?.logpdf(&s_obs))
            .collect::<Result<Vec<f64>>>()?;
        let ratio = stats::mean(&vals.iter().map(|l| (l - exact).exp()).collect::<Vec<_>>());
        let err = (ratio - 1.0).abs();
        summary.push("estimated-sl", "gaussian", m, "mean_ratio", ratio);
        summary.push("estimated-sl", "gaussian", m, "rel_err", err);
        for (r, l) in vals.iter().enumerate() {
            reps_table.row(&[m.to_string(), r.to_string(), fmt_f64(*l)]);
        }
        rel_errors.push((m, err));
    }
    summary.push("estimated-sl", "exact", 0, "log_sl", exact);
    let mut artifacts = Artifacts::new();
    artifacts.insert("estimated_sl_summary.csv".into(), summary.finish());
    artifacts.insert("estimated_sl_replicates.csv".into(), reps_table.finish());
    Ok(EstimatedSlReport {
        exact_log_sl: exact,
        rel_errors,
        artifacts,
    })
}

// ---------------------------------------------------------------------------
// g-and-k fitted with k = 0

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GkConfig {
    /// Data-generating `(A, B, g, k)`.
    pub a: f64,
    pub b: f64,
    pub g: f64,
    pub k: f64,
    pub n: usize,
    pub m: usize,
    pub n_iter: usize,
    pub burn_in: usize,
    pub init: Vec<f64>,
    pub proposal_sd: Vec<f64>,
    pub gamma_prior_mean: f64,
    pub ppc_reps: usize,
    /// Simulations behind the fixed naive covariance.
    pub sigma_m: usize,
    pub grad_m: usize,
    pub grad_step: f64,
    pub block_len: usize,
    pub n_boot: usize,
    pub bootvar_reps: usize,
    pub bootvar_n_boot: usize,
    pub bootvar_level: f64,
    pub seed: u64,
}

impl Default for GkConfig {
    fn default() -> Self {
        Self {
            a: 0.0,
            b: 0.5,
            g: 1.0,
            k: 0.5,
            n: 1000,
            m: 50,
            n_iter: 20_000,
            burn_in: 5_000,
            init: vec![0.0, 0.5, 0.0],
            proposal_sd: vec![0.02, 0.02, 0.1],
            gamma_prior_mean: 0.5,
            ppc_reps: 1000,
            sigma_m: 2000,
            grad_m: 10_000,
            grad_step: 0.01,
            block_len: 10,
            n_boot: 1000,
            bootvar_reps: 100,
            bootvar_n_boot: 200,
            bootvar_level: 0.01,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GkFit {
    pub standard: Chain,
    pub naive: Chain,
    pub kldn: Vec<KldnEntry>,
    pub ppc: PpcReport,
}

#[derive(Debug, Clone)]
pub struct GkReport {
    /// Fits without (`[0]`) and with (`[1]`) the tail summary.
    pub fits: Vec<GkFit>,
    pub robust: Chain,
    pub robust_ppc: PpcReport,
    pub gamma: Vec<GammaDeparture>,
    pub bootvar: Vec<BootVarEntry>,
    pub artifacts: Artifacts,
}

impl GkReport {
    /// KLDN of `g` without and with the tail summary.
    pub fn kldn_g(&self) -> (f64, f64) {
        (self.fits[0].kldn[2].kldn, self.fits[1].kldn[2].kldn)
    }
}

fn gk_fit(cfg: &GkConfig, y: &[f64], include_tail: bool, tag: &str) -> Result<GkFit> {
    let model = GkModel::k_zero(include_tail);
    let prior = box_log_prior(&model.bounds);
    let s_obs = model.summarize(y)?;
    let seed = |p: &str| derive_seed_path(cfg.seed, &format!("gk/{tag}/{p}"));
    let mc = |s: u64| McmcConfig::new(cfg.n_iter, cfg.init.clone(), cfg.proposal_sd.clone(), s).with_burn_in(cfg.burn_in, true);
    let standard = bsl_rwmh(&model, &prior, &s_obs, cfg.m, cfg.n, &mc(seed("standard")))?;
    let delta_n = estimate_sl(&model, &standard.mean(), cfg.sigma_m, cfg.n, seed("sigma"))?.cov;
    let naive = bsl_rwmh_with(
        &model,
        &prior,
        &s_obs,
        cfg.m,
        cfg.n,
        &mc(seed("naive")),
        &SlCovariance::Fixed(delta_n.clone()),
    )?;
    let theta_bar = naive.mean();
    let grad = mean_gradient_fd(&model, &theta_bar, cfg.n, cfg.grad_m, cfg.grad_step, seed("gradient"))?;
    let spec = BootstrapSpec::new(cfg.block_len, cfg.n_boot, seed("bootstrap"))?;
    let w = estimate_w(y, |v: &[f64]| model.summarize(v), &grad, &delta_n, &spec)?;
    let adj = adjust_sample(
        naive.kept().to_vec(),
        theta_bar,
        naive.covariance(),
        &w,
        cfg.n,
        TransformVariant::Sandwich,
        0.95,
    )?;
    let kldn = kldn_report(standard.kept(), &adj.adjusted_draws)?;
    let ppc = chain_ppc(&standard, &model, &s_obs, cfg.n, cfg.ppc_reps, seed("ppc"))?;
    Ok(GkFit {
        standard,
        naive,
        kldn,
        ppc,
    })
}

/// Simulates the data from `(a, b, g, k)` and runs [`run_gk_on`].
pub fn run_gk(cfg: &GkConfig) -> Result<GkReport> {
    let data = GkParams::new(cfg.a, cfg.b, cfg.g, cfg.k)?;
    let y = simulate_gk(&data, cfg.n, derive_seed_path(cfg.seed, "gk/data"))?;
    run_gk_on(cfg, &y)
}

/// Standard, naive/adjusted and robust fits of the `k = 0` model to `y`;
/// `cfg.n` is ignored in favour of the series length.
pub fn run_gk_on(cfg: &GkConfig, y: &TimeSeries) -> Result<GkReport> {
    let cfg = &GkConfig {
        n: y.len(),
        ..cfg.clone()
    };
    let fits = [(false, "s1"), (true, "s2")]
        .par_iter()
        .map(|&(tail, tag)| gk_fit(cfg, y.values(), tail, tag))
        .collect::<Result<Vec<_>>>()?;

    let model = GkModel::k_zero(true);
    let prior = box_log_prior(&model.bounds);
    let s_obs = model.summarize(y.values())?;
    let mc = McmcConfig::new(
        cfg.n_iter,
        cfg.init.clone(),
        cfg.proposal_sd.clone(),
        derive_seed_path(cfg.seed, "gk/s2/robust"),
    )
    .with_burn_in(cfg.burn_in, true);
    let gp = GammaPrior {
        mean: cfg.gamma_prior_mean,
        ..GammaPrior::default()
    };
    let robust = rbsl_mh(&model, &prior, &s_obs, cfg.m, cfg.n, &mc, &gp)?;
    let robust_ppc = chain_ppc(&robust, &model, &s_obs, cfg.n, cfg.ppc_reps, derive_seed_path(cfg.seed, "gk/s2/robust-ppc"))?;
    let gamma = gamma_departure(&robust, cfg.gamma_prior_mean)?;
    let spec = BootstrapSpec::new(cfg.block_len, cfg.bootvar_n_boot, derive_seed_path(cfg.seed, "gk/s2/bootvar"))?;
    let bootvar = bootstrap_variance_check(
        y.values(),
        fits[1].standard.kept(),
        &model,
        &spec,
        cfg.bootvar_reps,
        cfg.bootvar_level,
        derive_seed_path(cfg.seed, "gk/s2/bootvar-draws"),
    )?;

    let mut artifacts = Artifacts::new();
    let mut summary = LongTable::default();
    let mut data_csv = CsvTable::new(&["t", "y"]);
    for (i, v) in y.values().iter().enumerate() {
        data_csv.row(&[i.to_string(), fmt_f64(*v)]);
    }
    artifacts.insert("gk_data.csv".into(), data_csv.finish());
    for (fit, tag) in fits.iter().zip(["s1", "s2"]) {
        artifacts.insert(format!("gk_{tag}_standard_chain.csv"), fit.standard.to_csv());
        artifacts.insert(format!("gk_{tag}_naive_chain.csv"), fit.naive.to_csv());
        artifacts.insert(format!("gk_{tag}_standard_ppc.csv"), fit.ppc.to_csv());
        for (j, e) in fit.kldn.iter().enumerate() {
            summary.push("gk", tag, cfg.n, &format!("kldn_theta{}", j + 1), e.kldn);
        }
        for e in &fit.ppc.entries {
            summary.push("gk", &format!("{tag}-standard"), cfg.n, &format!("tail_{}", e.label), e.tail_prob);
        }
    }
    artifacts.insert("gk_s2_robust_chain.csv".into(), robust.to_csv());
    artifacts.insert("gk_s2_robust_ppc.csv".into(), robust_ppc.to_csv());
    for e in &robust_ppc.entries {
        summary.push("gk", "s2-robust", cfg.n, &format!("tail_{}", e.label), e.tail_prob);
    }
    let mut t = CsvTable::new(&["gamma", "ks"]);
    for gd in &gamma {
        t.row(&[format!("gamma{}", gd.coordinate + 1), fmt_f64(gd.ks)]);
        summary.push("gk", "s2-robust", cfg.n, &format!("ks_gamma{}", gd.coordinate + 1), gd.ks);
    }
    artifacts.insert("gk_gamma_departure.csv".into(), t.finish());
    let mut t = CsvTable::new(&["summary", "source", "value"]);
    for e in &bootvar {
        t.row(&[e.label.clone(), "observed".into(), fmt_f64(e.observed)]);
        for v in &e.predictive {
            t.row(&[e.label.clone(), "predictive".into(), fmt_f64(*v)]);
        }
        summary.push("gk", "s2-bootvar", cfg.n, &format!("tail_{}", e.label), e.tail_prob);
    }
    artifacts.insert("gk_bootstrap_variance.csv".into(), t.finish());
    artifacts.insert("gk_summary.csv".into(), summary.finish());
    Ok(GkReport {
        fits,
        robust,
        robust_ppc,
        gamma,
        bootvar,
        artifacts,
    })
}

// ---------------------------------------------------------------------------
// rejection ABC against the exact BSL posterior

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AbcConfig {
    pub n: usize,
    pub n_sims: usize,
    pub keep_frac: f64,
    pub omega: f64,
    pub rho: f64,
    pub sigma_v: f64,
    pub seed: u64,
}

impl Default for AbcConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            n_sims: 100_000,
            keep_frac: 0.005,
            omega: -0.736,
            rho: 0.90,
            sigma_v: 0.36,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AbcReport {
    pub abc_mean: f64,
    pub abc_modes: Vec<f64>,
    pub exact_modes: Vec<f64>,
    pub artifacts: Artifacts,
}

pub fn run_abc_contrast(cfg: &AbcConfig) -> Result<AbcReport> {
    let sv = sv_params(cfg.omega, cfg.rho, cfg.sigma_v)?;
    let model = Ma1Model::default();
    let y = simulate_sv(&sv, cfg.n, derive_seed_path(cfg.seed, "abc/data"))?;
    let s_obs = autocov(y.values(), &model.lags)?;
    let prior = |rng: &mut crate::rng::SimRng| vec![rand::Rng::random_range(rng, -1.0..1.0)];
    let abc = rejection_abc(&model, &prior, &s_obs, cfg.n, cfg.n_sims, cfg.keep_frac, derive_seed_path(cfg.seed, "abc/sims"))?;
    let theta = abc.column(0);
    let abc_modes = stats::sample_modes(&theta)?;
    let exact = exact_posterior(&s_obs, cfg.n, &ma1_grid())?;
    let mut t = CsvTable::new(&["draw", "theta", "distance"]);
    for (i, (th, d)) in theta.iter().zip(&abc.distances).enumerate() {
        t.row(&[i.to_string(), fmt_f64(*th), fmt_f64(*d)]);
    }
    let report = AbcReport {
        abc_mean: stats::mean(&theta),
        abc_modes,
        exact_modes: exact.modes(),
        artifacts: Artifacts::new(),
    };
    let mut summary = LongTable::default();
    summary.push("abc-contrast", "abc", cfg.n, "mean", report.abc_mean);
    summary.push("abc-contrast", "abc", cfg.n, "n_modes", report.abc_modes.len() as f64);
    summary.push("abc-contrast", "abc", cfg.n, "threshold", abc.threshold);
    summary.push("abc-contrast", "exact-bsl", cfg.n, "n_modes", report.exact_modes.len() as f64);
    let mut artifacts = Artifacts::new();
    artifacts.insert("abc_sample.csv".into(), t.finish());
    artifacts.insert("abc_exact_posterior.csv".into(), exact.to_csv());
    artifacts.insert("abc_summary.csv".into(), summary.finish());
    Ok(AbcReport { artifacts, ..report })
}
