//! Misspecification diagnostics: KLDN, posterior predictive checks on the
//! summaries and on their bootstrap variances, Gamma prior-departure, and the
//! repeated-sampling coverage experiment for naive and adjusted BSL.

use nalgebra::DVector;
use rayon::prelude::*;
use rand::Rng;

use crate::adjust::{run_adjusted_pipeline, AdjustConfig, TransformVariant};
use crate::csv::{fmt_f64, CsvTable, LongTable};
use crate::error::{domain, Result};
use crate::models::{simulate_sv, Model, SvParams};
use crate::posterior::Chain;
use crate::rng::{derive_seed, derive_seed_path, rng_from_seed};
use crate::stats;
use crate::summaries::{block_bootstrap_cov, BootstrapSpec};

/// KL divergence between the normal approximations `N(mu_s, sd_s^2)` of the
/// standard and `N(mu_a, sd_a^2)` of the adjusted marginal:
/// `ln(sd_a/sd_s) + (sd_s^2 + (mu_s - mu_a)^2) / (2 sd_a^2) - 1/2`.
pub fn kldn(mu_s: f64, sd_s: f64, mu_a: f64, sd_a: f64) -> Result<f64> {
    if !(sd_s > 0.0 && sd_a > 0.0) {
        return Err(domain("KLDN needs positive standard deviations"));
    }
    let v = (sd_a / sd_s).ln() + (sd_s * sd_s + (mu_s - mu_a).powi(2)) / (2.0 * sd_a * sd_a) - 0.5;
    Ok(v.max(0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KldnEntry {
    pub mu_s: f64,
    pub sd_s: f64,
    pub mu_a: f64,
    pub sd_a: f64,
    pub kldn: f64,
}

/// Per-parameter KLDN from standard and adjusted draw sets.
pub fn kldn_report(standard: &[Vec<f64>], adjusted: &[Vec<f64>]) -> Result<Vec<KldnEntry>> {
    let p = standard.first().map_or(0, |v| v.len());
    if p == 0 || adjusted.first().map_or(0, |v| v.len()) != p {
        return Err(domain("KLDN needs non-empty draw sets of equal dimension"));
    }
    (0..p)
        .map(|j| {
            let s: Vec<f64> = standard.iter().map(|d| d[j]).collect();
            let a: Vec<f64> = adjusted.iter().map(|d| d[j]).collect();
            let (mu_s, sd_s) = (stats::mean(&s), stats::variance(&s).sqrt());
            let (mu_a, sd_a) = (stats::mean(&a), stats::variance(&a).sqrt());
            Ok(KldnEntry {
                mu_s,
                sd_s,
                mu_a,
                sd_a,
                kldn: kldn(mu_s, sd_s, mu_a, sd_a)?,
            })
        })
        .collect()
}

/// Two-sided tail probability of `obs` within `pred`, with the `+1`
/// continuity correction, capped at 1/2.
pub fn tail_probability(pred: &[f64], obs: f64) -> f64 {
    let r = pred.len() as f64 + 1.0;
    let lo = (pred.iter().filter(|&&v| v <= obs).count() as f64 + 1.0) / r;
    let hi = (pred.iter().filter(|&&v| v >= obs).count() as f64 + 1.0) / r;
    lo.min(hi).min(0.5)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpcEntry {
    pub label: String,
    pub observed: f64,
    pub predictive: Vec<f64>,
    pub tail_prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpcReport {
    pub entries: Vec<PpcEntry>,
}

impl PpcReport {
    pub fn tail_probs(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.tail_prob).collect()
    }

    /// Long CSV: `summary,replicate,value` with the observed value as
    /// replicate `-1`.
    pub fn to_csv(&self) -> String {
        let mut t = CsvTable::new(&["summary", "replicate", "value"]);
        for e in &self.entries {
            t.row(&[e.label.clone(), "-1".into(), fmt_f64(e.observed)]);
            for (i, v) in e.predictive.iter().enumerate() {
                t.row(&[e.label.clone(), i.to_string(), fmt_f64(*v)]);
            }
        }
        t.finish()
    }
}

fn pick_draws(draws: &[Vec<f64>], n_rep: usize, seed: u64) -> Result<Vec<(Vec<f64>, u64)>> {
    if draws.is_empty() {
        return Err(domain("posterior predictive check needs a non-empty chain"));
    }
    let mut rng = rng_from_seed(seed);
    Ok((0..n_rep)
        .map(|i| {
            let j = rng.random_range(0..draws.len());
            (draws[j].clone(), derive_seed(seed, i as u64))
        })
        .collect())
}

/// Simulates one dataset per posterior draw (drawn uniformly from `draws`)
/// and compares each observed summary with its predictive distribution.
pub fn posterior_predictive_check(
    draws: &[Vec<f64>],
    model: &dyn Model,
    s_obs: &DVector<f64>,
    n: usize,
    n_rep: usize,
    seed: u64,
) -> Result<PpcReport> {
    let picks = pick_draws(draws, n_rep, seed)?;
    let sims = picks
        .par_iter()
        .map(|(theta, s)| model.simulate_summary(theta, n, *s))
        .collect::<Result<Vec<_>>>()?;
    let labels = model.summary_labels();
    let entries = (0..s_obs.len())
        .map(|k| {
            let pred: Vec<f64> = sims.iter().map(|s| s[k]).collect();
            PpcEntry {
                label: labels.get(k).cloned().unwrap_or_else(|| format!("S{}", k + 1)),
                observed: s_obs[k],
                tail_prob: tail_probability(&pred, s_obs[k]),
                predictive: pred,
            }
        })
        .collect();
    Ok(PpcReport { entries })
}

/// [`posterior_predictive_check`] on the post burn-in draws of a chain.
pub fn chain_ppc(
    chain: &Chain,
    model: &dyn Model,
    s_obs: &DVector<f64>,
    n: usize,
    n_rep: usize,
    seed: u64,
) -> Result<PpcReport> {
    posterior_predictive_check(chain.kept(), model, s_obs, n, n_rep, seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootVarEntry {
    pub label: String,
    pub observed: f64,
    pub predictive: Vec<f64>,
    pub tail_prob: f64,
    /// Whether the observed variance is below the lower `level` tail.
    pub observed_smaller: bool,
    pub flagged: bool,
}

/// Bootstrap variances of each summary for the observed series and for
/// `n_rep` posterior predictive series; a summary is flagged when its
/// observed variance lies in the `level` tail of the predictive ones.
#[allow(clippy::too_many_arguments)]
pub fn bootstrap_variance_check(
    y: &[f64],
    draws: &[Vec<f64>],
    model: &dyn Model,
    spec: &BootstrapSpec,
    n_rep: usize,
    level: f64,
    seed: u64,
) -> Result<Vec<BootVarEntry>> {
    let summary = |v: &[f64]| model.summarize(v);
    let obs = block_bootstrap_cov(y, summary, spec)?.diagonal();
    let picks = pick_draws(draws, n_rep, seed)?;
    let pred = picks
        .par_iter()
        .enumerate()
        .map(|(i, (theta, s))| {
            let sim = model.simulate(theta, y.len(), *s)?;
            let sp = BootstrapSpec {
                seed: derive_seed(spec.seed, 1_000_000 + i as u64),
                ..*spec
            };
            Ok(block_bootstrap_cov(sim.values(), |v: &[f64]| model.summarize(v), &sp)?.diagonal())
        })
        .collect::<Result<Vec<DVector<f64>>>>()?;
    let labels = model.summary_labels();
    Ok((0..obs.len())
        .map(|k| {
            let p: Vec<f64> = pred.iter().map(|d| d[k]).collect();
            let tail = tail_probability(&p, obs[k]);
            let below = p.iter().filter(|&&v| v > obs[k]).count() * 2 > p.len();
            BootVarEntry {
                label: labels.get(k).cloned().unwrap_or_else(|| format!("S{}", k + 1)),
                observed: obs[k],
                tail_prob: tail,
                observed_smaller: below,
                flagged: tail < level,
                predictive: p,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaDeparture {
    /// Zero-based summary index.
    pub coordinate: usize,
    pub ks: f64,
}

/// KS distance between each post burn-in `gamma_j` marginal and its
/// exponential prior, sorted from largest to smallest.
pub fn gamma_departure(chain: &Chain, prior_mean: f64) -> Result<Vec<GammaDeparture>> {
    let g = chain
        .gammas
        .as_ref()
        .ok_or_else(|| domain("chain has no Gamma draws"))?;
    if !(prior_mean > 0.0) {
        return Err(domain("prior mean must be positive"));
    }
    let d = g.first().map_or(0, |v| v.len());
    let mut out: Vec<GammaDeparture> = (0..d)
        .map(|j| GammaDeparture {
            coordinate: j,
            ks: stats::ks_exponential(&chain.gamma_column(j).unwrap_or_default(), prior_mean),
        })
        .collect();
    out.sort_by(|a, b| b.ks.total_cmp(&a.ks).then(a.coordinate.cmp(&b.coordinate)));
    Ok(out)
}

/// Repeated-sampling comparison of naive and adjusted BSL on SV data.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageConfig {
    pub sample_sizes: Vec<usize>,
    pub replications: usize,
    pub sv: SvParams,
    pub n_draws: usize,
    pub block_len: usize,
    pub n_boot: usize,
    pub variant: TransformVariant,
    pub level: f64,
    /// Value whose coverage is tallied.
    pub target: f64,
    pub seed: u64,
}

impl CoverageConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            sample_sizes: vec![100, 1000],
            replications: 100,
            sv: SvParams::reference(),
            n_draws: 10_000,
            block_len: 10,
            n_boot: 1000,
            variant: TransformVariant::Sandwich,
            level: 0.95,
            target: 0.0,
            seed,
        }
    }
}

/// Outcome of one replication; `error` is set when the pipeline failed.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageRow {
    pub n: usize,
    pub replication: usize,
    pub naive_mean: f64,
    pub naive_var: f64,
    pub naive_covers: bool,
    pub adjusted_mean: f64,
    pub adjusted_var: f64,
    pub adjusted_covers: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageCell {
    pub method: &'static str,
    pub n: usize,
    pub mean_x1e3: f64,
    pub var: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageTable {
    pub rows: Vec<CoverageRow>,
    pub cells: Vec<CoverageCell>,
}

impl CoverageTable {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }

    /// Fraction of successful replications at `n` where the adjusted
    /// posterior variance is below the naive one.
    pub fn variance_ordering(&self, n: usize) -> f64 {
        let ok: Vec<_> = self.rows.iter().filter(|r| r.n == n && r.error.is_none()).collect();
        ok.iter().filter(|r| r.adjusted_var < r.naive_var).count() as f64 / ok.len() as f64
    }

    pub fn cell(&self, method: &str, n: usize) -> Option<&CoverageCell> {
        self.cells.iter().find(|c| c.method == method && c.n == n)
    }

    /// Long-format table (`experiment,method,n,metric,value`).
    pub fn summary_csv(&self) -> String {
        let mut t = LongTable::default();
        for c in &self.cells {
            t.push("coverage", c.method, c.n, "mean_x1e3", c.mean_x1e3);
            t.push("coverage", c.method, c.n, "var", c.var);
            t.push("coverage", c.method, c.n, "cov", c.coverage);
        }
        t.finish()
    }

    pub fn replications_csv(&self) -> String {
        let mut t = CsvTable::new(&[
            "n",
            "replication",
            "naive_mean",
            "naive_var",
            "naive_covers",
            "adjusted_mean",
            "adjusted_var",
            "adjusted_covers",
            "error",
        ]);
        for r in &self.rows {
            t.row(&[
                r.n.to_string(),
                r.replication.to_string(),
                fmt_f64(r.naive_mean),
                fmt_f64(r.naive_var),
                u8::from(r.naive_covers).to_string(),
                fmt_f64(r.adjusted_mean),
                fmt_f64(r.adjusted_var),
                u8::from(r.adjusted_covers).to_string(),
                r.error.clone().unwrap_or_default(),
            ]);
        }
        t.finish()
    }
}

fn coverage_replication(cfg: &CoverageConfig, n: usize, r: usize) -> CoverageRow {
    let seed = derive_seed_path(cfg.seed, &format!("coverage/n{n}/rep{r}"));
    let run = || -> Result<CoverageRow> {
        let y = simulate_sv(&cfg.sv, n, derive_seed_path(seed, "data"))?;
        let acfg = AdjustConfig {
            n_draws: cfg.n_draws,
            block_len: cfg.block_len,
            n_boot: cfg.n_boot,
            variant: cfg.variant,
            level: cfg.level,
            ..AdjustConfig::new(derive_seed_path(seed, "pipeline"))
        };
        let rep = run_adjusted_pipeline(&y, &acfg)?;
        let nv = rep.naive_column(0);
        let av = rep.adjusted_column(0);
        let (nlo, nhi) = rep.naive_interval(0);
        let (alo, ahi) = rep.adjusted_interval(0);
        Ok(CoverageRow {
            n,
            replication: r,
            naive_mean: stats::mean(&nv),
            naive_var: stats::variance(&nv),
            naive_covers: nlo <= cfg.target && cfg.target <= nhi,
            adjusted_mean: stats::mean(&av),
            adjusted_var: stats::variance(&av),
            adjusted_covers: alo <= cfg.target && cfg.target <= ahi,
            error: None,
        })
    };
    run().unwrap_or_else(|e| CoverageRow {
        n,
        replication: r,
        naive_mean: f64::NAN,
        naive_var: f64::NAN,
        naive_covers: false,
        adjusted_mean: f64::NAN,
        adjusted_var: f64::NAN,
        adjusted_covers: false,
        error: Some(e.to_string()),
    })
}

/// Runs every (n, replication) pair in parallel; failed replications become
/// rows carrying the error message and are excluded from the cell averages.
pub fn coverage_experiment(cfg: &CoverageConfig) -> CoverageTable {
    let jobs: Vec<(usize, usize)> = cfg
        .sample_sizes
        .iter()
        .flat_map(|&n| (0..cfg.replications).map(move |r| (n, r)))
        .collect();
    let rows: Vec<CoverageRow> = jobs
        .par_iter()
        .map(|&(n, r)| coverage_replication(cfg, n, r))
        .collect();
    let mut cells = Vec::new();
    for &n in &cfg.sample_sizes {
        let ok: Vec<&CoverageRow> = rows.iter().filter(|r| r.n == n && r.error.is_none()).collect();
        let k = ok.len() as f64;
        for method in ["a-BSL", "n-BSL"] {
            let adj = method == "a-BSL";
            let pick = |r: &CoverageRow| if adj { (r.adjusted_mean, r.adjusted_var, r.adjusted_covers) } else { (r.naive_mean, r.naive_var, r.naive_covers) };
            cells.push(CoverageCell {
                method,
                n,
                mean_x1e3: 1e3 * ok.iter().map(|r| pick(r).0).sum::<f64>() / k,
                var: ok.iter().map(|r| pick(r).1).sum::<f64>() / k,
                coverage: ok.iter().filter(|r| pick(r).2).count() as f64 / k,
            });
        }
    }
    CoverageTable { rows, cells }
}
