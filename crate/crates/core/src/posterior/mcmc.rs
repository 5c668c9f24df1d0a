use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::csv::{fmt_f64, CsvTable};
use crate::error::{domain, Error, Result};
use crate::linalg::{min_eigenvalue, mvn_logpdf, sample_mean_cov, sym_sqrt};
use crate::models::Model;
use crate::rng::{rng_from_seed, SimRng};
use crate::synthlik::estimate_sl;

const ADAPT_BATCH: usize = 50;
const TARGET_LO: f64 = 0.234;
const TARGET_HI: f64 = 0.44;
/// Burn-in interval between refits of the proposal covariance.
const COV_UPDATE: usize = 500;

/// Random-walk sampler settings.
#[derive(Debug, Clone, PartialEq)]
pub struct McmcConfig {
    pub n_iter: usize,
    /// Iterations during which proposals adapt; the draws are still stored
    /// and `Chain::burn_in` records the boundary. With `adapt` set, the
    /// proposal scale follows the batch acceptance rate toward 0.234-0.44
    /// and, for vector parameters, the proposal covariance is refitted every
    /// 500 iterations from the second half of the draws so far. Everything
    /// is frozen after the burn-in.
    pub burn_in: usize,
    pub proposal_sd: Vec<f64>,
    pub init: Vec<f64>,
    pub adapt: bool,
    pub seed: u64,
}

impl McmcConfig {
    pub fn new(n_iter: usize, init: Vec<f64>, proposal_sd: Vec<f64>, seed: u64) -> Self {
        Self {
            n_iter,
            burn_in: 0,
            proposal_sd,
            init,
            adapt: false,
            seed,
        }
    }

    pub fn with_burn_in(mut self, burn_in: usize, adapt: bool) -> Self {
        self.burn_in = burn_in;
        self.adapt = adapt;
        self
    }
}

/// One adaptation step: iteration index, batch acceptance rate and the
/// proposal standard deviations in force afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct TuningStep {
    pub iter: usize,
    pub rate: f64,
    pub theta_sd: Vec<f64>,
    pub gamma_sd: Vec<f64>,
}

/// Output of a seeded MCMC run. Every iteration is stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub draws: Vec<Vec<f64>>,
    pub gammas: Option<Vec<Vec<f64>>>,
    pub loglik_trace: Vec<f64>,
    /// Whether the theta move at each iteration was accepted.
    pub accepted: Vec<bool>,
    /// Accepted theta moves over iterations; NaN (0/0) for an empty chain.
    pub acceptance_rate: f64,
    pub gamma_acceptance_rate: Option<f64>,
    pub seed: u64,
    pub burn_in: usize,
    pub proposal_sd: Vec<f64>,
    pub tuning: Vec<TuningStep>,
    /// Proposals rejected because the SL covariance was singular or the
    /// simulator failed.
    pub failed_proposals: usize,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// Draws after the burn-in.
    pub fn kept(&self) -> &[Vec<f64>] {
        &self.draws[self.burn_in.min(self.draws.len())..]
    }

    /// Post burn-in values of parameter `j`.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.kept().iter().map(|d| d[j]).collect()
    }

    /// Post burn-in values of `gamma_j`, if the chain carries Gamma.
    pub fn gamma_column(&self, j: usize) -> Option<Vec<f64>> {
        let g = self.gammas.as_ref()?;
        Some(g[self.burn_in.min(g.len())..].iter().map(|v| v[j]).collect())
    }

    pub fn mean(&self) -> Vec<f64> {
        let k = self.kept();
        let d = k.first().map_or(0, |v| v.len());
        (0..d)
            .map(|j| k.iter().map(|v| v[j]).sum::<f64>() / k.len() as f64)
            .collect()
    }

    /// Sample covariance of the post burn-in draws.
    pub fn covariance(&self) -> DMatrix<f64> {
        let k = self.kept();
        let d = k.first().map_or(0, |v| v.len());
        let mu = self.mean();
        let mut c = DMatrix::zeros(d, d);
        for v in k {
            for a in 0..d {
                for b in 0..d {
                    c[(a, b)] += (v[a] - mu[a]) * (v[b] - mu[b]);
                }
            }
        }
        c / (k.len() as f64 - 1.0)
    }

    /// CSV with header `iter,theta...,gamma...,loglik,accepted`.
    pub fn to_csv(&self) -> String {
        let d = self.draws.first().map_or(0, |v| v.len());
        let dg = self
            .gammas
            .as_ref()
            .and_then(|g| g.first())
            .map_or(0, |v| v.len());
        let mut header = vec!["iter".to_string()];
        if d == 1 {
            header.push("theta".into());
        } else {
            header.extend((1..=d).map(|j| format!("theta{j}")));
        }
        header.extend((1..=dg).map(|j| format!("gamma{j}")));
        header.push("loglik".into());
        header.push("accepted".into());
        let mut t = CsvTable::new(&header);
        for i in 0..self.draws.len() {
            let mut row = vec![i.to_string()];
            row.extend(self.draws[i].iter().map(|&v| fmt_f64(v)));
            if let Some(g) = &self.gammas {
                row.extend(g[i].iter().map(|&v| fmt_f64(v)));
            }
            row.push(fmt_f64(self.loglik_trace[i]));
            row.push(if self.accepted[i] { "1" } else { "0" }.into());
            t.row(&row);
        }
        t.finish()
    }
}

/// How the SL covariance is formed at each parameter value.
#[derive(Debug, Clone, PartialEq)]
pub enum SlCovariance {
    /// Sample covariance of the `m` simulations.
    Estimated,
    /// A fixed positive-definite matrix for every theta; only the mean is
    /// estimated.
    Fixed(DMatrix<f64>),
}

/// Moments at the current state, kept so Gamma moves reuse them.
struct State {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    cov_sqrt: Option<DMatrix<f64>>,
}

struct Target<'a> {
    model: &'a dyn Model,
    log_prior: &'a dyn Fn(&[f64]) -> f64,
    s_obs: &'a DVector<f64>,
    m: usize,
    n: usize,
    cov_kind: &'a SlCovariance,
    robust: bool,
    root: InflationRoot,
}

impl Target<'_> {
    fn state(&self, theta: &[f64], seed: u64) -> Result<State> {
        let (mean, cov) = match self.cov_kind {
            SlCovariance::Estimated => {
                let e = estimate_sl(self.model, theta, self.m, self.n, seed)?;
                (e.mean, e.cov)
            }
            SlCovariance::Fixed(c) => {
                let sims = (0..self.m)
                    .map(|i| {
                        self.model
                            .simulate_summary(theta, self.n, crate::rng::derive_seed(seed, i as u64))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let mut mean = DVector::zeros(sims[0].len());
                for s in &sims {
                    mean += s;
                }
                (mean / self.m as f64, c.clone())
            }
        };
        let cov_sqrt = if self.robust {
            Some(match self.root {
                InflationRoot::Symmetric => sym_sqrt(&cov)?,
                InflationRoot::Diagonal => DMatrix::from_diagonal(&cov.diagonal().map(f64::sqrt)),
            })
        } else {
            None
        };
        Ok(State {
            mean,
            cov,
            cov_sqrt,
        })
    }

    fn loglik(&self, st: &State, gamma: &[f64]) -> Result<f64> {
        match &st.cov_sqrt {
            Some(r) if gamma.iter().any(|&g| g != 0.0) => {
                let inflated =
                    &st.cov + r * DMatrix::from_diagonal(&DVector::from_column_slice(gamma)) * r;
                mvn_logpdf(self.s_obs, &st.mean, &inflated)
            }
            _ => mvn_logpdf(self.s_obs, &st.mean, &st.cov),
        }
    }
}

fn check_config(cfg: &McmcConfig, model: &dyn Model, s_obs: &DVector<f64>) -> Result<()> {
    let d = model.theta_dim();
    if cfg.init.len() != d || cfg.proposal_sd.len() != d {
        return Err(domain(format!(
            "init and proposal_sd must have length {d} (theta dimension)"
        )));
    }
    if cfg.proposal_sd.iter().any(|&s| !(s > 0.0)) {
        return Err(domain("proposal standard deviations must be positive"));
    }
    if s_obs.len() != model.summary_dim() {
        return Err(domain("observed summary dimension does not match the model"));
    }
    Ok(())
}

/// Cholesky factor of the sample covariance of `draws`, if it is clearly
/// positive-definite.
fn recent_covariance(draws: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    if draws.len() < 20 {
        return None;
    }
    let rows: Vec<DVector<f64>> = draws.iter().map(|v| DVector::from_column_slice(v)).collect();
    let (_, cov) = sample_mean_cov(&rows).ok()?;
    let scale = cov.diagonal().amax();
    if !(scale > 0.0) || min_eigenvalue(&cov) <= 1e-10 * scale {
        return None;
    }
    Some(cov.cholesky()?.l())
}

fn adapt_scale(sd: &mut f64, base: f64, rate: f64, batch: usize) {
    let step = (1.0 / (batch as f64).sqrt()).min(0.5);
    if rate < TARGET_LO {
        *sd *= (-step).exp();
    } else if rate > TARGET_HI {
        *sd *= step.exp();
    }
    // a sticky pseudo-marginal chain has low acceptance at any scale, so
    // the multiplier is kept within a modest range
    *sd = sd.clamp(base * 0.05, base * 20.0);
}

/// Square root `R` in the inflated covariance `Sigma + R diag(gamma) R`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InflationRoot {
    /// Symmetric positive semi-definite square root of `Sigma`.
    #[default]
    Symmetric,
    /// Diagonal matrix of the summary standard deviations, so `gamma_j`
    /// inflates the variance of summary `j` alone.
    Diagonal,
}

/// Gamma settings for the robust sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaPrior {
    /// Mean of the independent exponential priors; zero pins Gamma at 0.
    pub mean: f64,
    /// Initial standard deviation of the log-scale random walk on each gamma.
    pub log_proposal_sd: f64,
    pub root: InflationRoot,
}

impl Default for GammaPrior {
    fn default() -> Self {
        Self {
            mean: 0.5,
            log_proposal_sd: 1.0,
            root: InflationRoot::Symmetric,
        }
    }
}

/// Pseudo-marginal random-walk Metropolis-Hastings for the BSL posterior.
///
/// A fresh SL estimate is drawn at every proposal and compared with the
/// stored estimate at the current state, which is never refreshed. Proposals
/// outside the prior support are rejected without simulating; a singular SL
/// covariance at the proposal rejects it.
pub fn bsl_rwmh(
    model: &dyn Model,
    log_prior: &dyn Fn(&[f64]) -> f64,
    s_obs: &DVector<f64>,
    m: usize,
    n: usize,
    cfg: &McmcConfig,
) -> Result<Chain> {
    bsl_rwmh_with(model, log_prior, s_obs, m, n, cfg, &SlCovariance::Estimated)
}

/// [`bsl_rwmh`] with a choice of SL covariance.
pub fn bsl_rwmh_with(
    model: &dyn Model,
    log_prior: &dyn Fn(&[f64]) -> f64,
    s_obs: &DVector<f64>,
    m: usize,
    n: usize,
    cfg: &McmcConfig,
    cov_kind: &SlCovariance,
) -> Result<Chain> {
    let target = Target {
        model,
        log_prior,
        s_obs,
        m,
        n,
        cov_kind,
        robust: false,
        root: InflationRoot::Symmetric,
    };
    run(&target, cfg, None)
}

/// Robust BSL: MH-within-Gibbs over `(theta, Gamma)` with the inflated
/// covariance `Sigma + R diag(gamma) R`, with `R` chosen by `GammaPrior::root`.
///
/// Each iteration makes one pseudo-marginal theta move followed by one
/// log-scale random-walk move per `gamma_j`, all against the joint target.
pub fn rbsl_mh(
    model: &dyn Model,
    log_prior: &dyn Fn(&[f64]) -> f64,
    s_obs: &DVector<f64>,
    m: usize,
    n: usize,
    cfg: &McmcConfig,
    gamma_prior: &GammaPrior,
) -> Result<Chain> {
    if gamma_prior.mean < 0.0 || !(gamma_prior.log_proposal_sd > 0.0) {
        return Err(domain("gamma prior mean must be >= 0 and proposal sd > 0"));
    }
    let target = Target {
        model,
        log_prior,
        s_obs,
        m,
        n,
        cov_kind: &SlCovariance::Estimated,
        robust: gamma_prior.mean > 0.0,
        root: gamma_prior.root,
    };
    run(&target, cfg, Some(gamma_prior))
}

fn run(target: &Target, cfg: &McmcConfig, gamma_prior: Option<&GammaPrior>) -> Result<Chain> {
    check_config(cfg, target.model, target.s_obs)?;
    let d = cfg.init.len();
    let ds = target.s_obs.len();
    let mut rng: SimRng = rng_from_seed(cfg.seed);

    let mut theta = cfg.init.clone();
    let lp0 = (target.log_prior)(&theta);
    if !target.model.in_support(&theta) || !lp0.is_finite() {
        return Err(domain("initial theta is outside the prior support"));
    }
    let robust = target.robust;
    let gmean = gamma_prior.map_or(0.0, |g| g.mean);
    let mut gamma = if robust { vec![gmean; ds] } else { vec![0.0; ds] };
    let gamma_lp = |g: &[f64]| -> f64 {
        if robust {
            -g.iter().sum::<f64>() / gmean
        } else {
            0.0
        }
    };

    let mut state = target.state(&theta, rng.random())?;
    let mut ll = target.loglik(&state, &gamma)?;
    let mut lp = lp0;

    // proposal: theta + mult * chol * z
    let mut chol = DMatrix::from_diagonal(&DVector::from_column_slice(&cfg.proposal_sd));
    let mut mult = 1.0;
    let diag_sd = |chol: &DMatrix<f64>, mult: f64| -> Vec<f64> {
        (0..chol.nrows())
            .map(|i| mult * chol.row(i).norm())
            .collect()
    };
    let mut gsd = vec![gamma_prior.map_or(1.0, |g| g.log_proposal_sd); ds];
    let gsd0 = gsd.clone();

    let mut chain = Chain {
        draws: Vec::with_capacity(cfg.n_iter),
        gammas: gamma_prior.map(|_| Vec::with_capacity(cfg.n_iter)),
        loglik_trace: Vec::with_capacity(cfg.n_iter),
        accepted: Vec::with_capacity(cfg.n_iter),
        acceptance_rate: f64::NAN,
        gamma_acceptance_rate: None,
        seed: cfg.seed,
        burn_in: cfg.burn_in.min(cfg.n_iter),
        proposal_sd: Vec::new(),
        tuning: Vec::new(),
        failed_proposals: 0,
    };
    let mut n_acc = 0usize;
    let mut batch_acc = 0usize;
    let mut g_acc_total = 0usize;
    let mut g_tries_total = 0usize;
    let mut g_batch_acc = vec![0usize; ds];
    let mut batches = 0usize;

    for it in 0..cfg.n_iter {
        // theta block
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let step = &chol * z * mult;
        let prop: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + s).collect();
        let u: f64 = rng.random();
        let sim_seed: u64 = rng.random();
        let mut acc = false;
        let lp_prop = if target.model.in_support(&prop) {
            (target.log_prior)(&prop)
        } else {
            f64::NEG_INFINITY
        };
        if lp_prop.is_finite() {
            match target
                .state(&prop, sim_seed)
                .and_then(|st| target.loglik(&st, &gamma).map(|l| (st, l)))
            {
                Ok((st, ll_prop)) => {
                    if u.ln() < lp_prop + ll_prop - lp - ll {
                        theta = prop;
                        state = st;
                        ll = ll_prop;
                        lp = lp_prop;
                        acc = true;
                    }
                }
                Err(e @ (Error::Singular { .. } | Error::Factorization(_) | Error::DegenerateSummary(_))) => {
                    log::warn!("proposal rejected at iteration {it}: {e}");
                    chain.failed_proposals += 1;
                }
                Err(e) => return Err(e),
            }
        }
        if acc {
            n_acc += 1;
            batch_acc += 1;
        }

        // Gamma block
        if robust {
            for j in 0..ds {
                let z: f64 = rng.sample(StandardNormal);
                let u: f64 = rng.random();
                let mut g_prop = gamma.clone();
                g_prop[j] = gamma[j] * (gsd[j] * z).exp();
                g_tries_total += 1;
                if let Ok(ll_prop) = target.loglik(&state, &g_prop) {
                    let log_ratio = ll_prop - ll + gamma_lp(&g_prop) - gamma_lp(&gamma)
                        + (g_prop[j] / gamma[j]).ln();
                    if u.ln() < log_ratio {
                        gamma = g_prop;
                        ll = ll_prop;
                        g_acc_total += 1;
                        g_batch_acc[j] += 1;
                    }
                }
            }
        }

        chain.draws.push(theta.clone());
        if let Some(g) = chain.gammas.as_mut() {
            g.push(gamma.clone());
        }
        chain.loglik_trace.push(ll);
        chain.accepted.push(acc);

        if cfg.adapt && it < cfg.burn_in && (it + 1) % ADAPT_BATCH == 0 {
            batches += 1;
            let rate = batch_acc as f64 / ADAPT_BATCH as f64;
            adapt_scale(&mut mult, 1.0, rate, batches);
            if d > 1 && (it + 1) % COV_UPDATE == 0 {
                if let Some(c) = recent_covariance(&chain.draws[(it + 1) / 2..]) {
                    chol = c * (2.38 / (d as f64).sqrt());
                    mult = 1.0;
                }
            }
            if robust {
                for j in 0..ds {
                    let r = g_batch_acc[j] as f64 / ADAPT_BATCH as f64;
                    adapt_scale(&mut gsd[j], gsd0[j], r, batches);
                    g_batch_acc[j] = 0;
                }
            }
            chain.tuning.push(TuningStep {
                iter: it + 1,
                rate,
                theta_sd: diag_sd(&chol, mult),
                gamma_sd: if robust { gsd.clone() } else { Vec::new() },
            });
            batch_acc = 0;
        }
    }
    chain.acceptance_rate = n_acc as f64 / cfg.n_iter as f64;
    if gamma_prior.is_some() {
        chain.gamma_acceptance_rate = Some(g_acc_total as f64 / g_tries_total as f64);
    }
    chain.proposal_sd = diag_sd(&chol, mult);
    Ok(chain)
}
