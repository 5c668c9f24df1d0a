//! Batch runner behind the `synlik` binary: parses a TOML config plus
//! `key=value` overrides, runs one experiment driver and writes its CSV/JSON
//! artifacts with a manifest.

pub mod config;
pub mod ingest;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use synlik::adjust::{run_adjusted_pipeline, AdjustConfig, TransformVariant};
use synlik::csv::{fmt_f64, CsvTable};
use synlik::experiments::{self as ex, Artifacts};
use synlik::models::{simulate_gk, simulate_ma1, simulate_sv, GkParams, Ma1Params, SvParams, TimeSeries};
use toml::Table;

pub use config::RunnerSettings;
pub use ingest::ingest_returns;

/// Environment variable giving the default output directory.
pub const OUT_DIR_ENV: &str = "SYNLIK_OUT_DIR";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error(transparent)]
    Core(#[from] synlik::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{failed} of {total} replications failed; see the per-replication error rows")]
    PartialFailure { failed: usize, total: usize },
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Input(_) => "input",
            CliError::Core(_) => "computation",
            CliError::Io(_) => "io",
            CliError::PartialFailure { .. } => "partial_failure",
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({ "error": self.kind(), "message": self.to_string() })
    }
}

#[derive(Debug, Parser)]
#[command(name = "synlik", version, about = "Bayesian synthetic likelihood experiments")]
pub struct Cli {
    /// TOML config file; keys are the fields of the chosen experiment.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config key (repeatable); wins over the config file.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Output directory [default: $SYNLIK_OUT_DIR, else ./synlik-out].
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Master seed; wins over `seed` in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Simulate one series from a model.
    Simulate,
    /// Exact MA(1) BSL posteriors over a range of S0 values.
    ExactPosterior,
    /// Exact and tempered posteriors on replicated SV datasets.
    Temper,
    /// Robust BSL with variance inflation on SV data.
    Rbsl,
    /// Naive and adjusted BSL: coverage experiment, or one series via `input`.
    Adjust,
    /// SL criterion, score and Hessian over a grid.
    HessianScan,
    /// g-and-k misspecification pipeline (simulated data, or `input`).
    Gk,
    /// Rejection ABC against the exact BSL posterior.
    AbcContrast,
    /// Score, root, shape and sandwich checks of the large-sample theory.
    BvmCheck,
    /// Averaged estimated SL against the exact SL.
    EstimatedSl,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::ExactPosterior => "exact-posterior",
            Command::Temper => "temper",
            Command::Rbsl => "rbsl",
            Command::Adjust => "adjust",
            Command::HessianScan => "hessian-scan",
            Command::Gk => "gk",
            Command::AbcContrast => "abc-contrast",
            Command::BvmCheck => "bvm-check",
            Command::EstimatedSl => "estimated-sl",
        }
    }
}

/// Model simulation settings for `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    /// `ma1`, `sv` or `gk`.
    pub model: String,
    /// `[theta]`, `[omega, rho, sigma_v]` or `[a, b, g, k]`.
    pub params: Vec<f64>,
    pub n: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            model: "sv".into(),
            params: vec![-0.736, 0.90, 0.36],
            n: 1000,
        }
    }
}

/// Artifacts of one run, the effective config and whether any replication
/// failed.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub artifacts: Artifacts,
    pub config: serde_json::Value,
    pub failures: Option<(usize, usize)>,
}

fn with_seed(mut table: Table, seed: u64) -> Table {
    table.insert("seed".into(), toml::Value::Integer(seed as i64));
    table
}

fn effective<T: Serialize>(cfg: &T) -> serde_json::Value {
    serde_json::to_value(cfg).unwrap_or(serde_json::Value::Null)
}

fn plain(artifacts: Artifacts, config: serde_json::Value) -> RunOutput {
    RunOutput {
        artifacts,
        config,
        failures: None,
    }
}

fn series_csv(y: &TimeSeries) -> String {
    let mut t = CsvTable::new(&["t", "y"]);
    for (i, v) in y.values().iter().enumerate() {
        t.row(&[i.to_string(), fmt_f64(*v)]);
    }
    t.finish()
}

fn input_series(rs: &RunnerSettings, min_rows: usize) -> Result<Option<TimeSeries>, CliError> {
    let Some(path) = &rs.input else {
        return Ok(None);
    };
    let column = rs
        .column
        .as_deref()
        .ok_or_else(|| CliError::Config("`input` needs `column`".into()))?;
    ingest_returns(Path::new(path), column, rs.log_returns, min_rows).map(Some)
}

/// Runs one subcommand on an already merged config table (runner keys
/// removed) and returns its artifacts.
pub fn execute(command: Command, table: Table, rs: &RunnerSettings) -> Result<RunOutput, CliError> {
    let seed = rs
        .seed
        .ok_or_else(|| CliError::Config("a seed is required: set `seed` in the config or pass --seed".into()))?;
    if rs.input.is_some() && !matches!(command, Command::Adjust | Command::Gk) {
        return Err(CliError::Config(format!("`input` is not used by {}", command.name())));
    }
    match command {
        Command::Simulate => {
            let cfg: SimulateConfig = config::parse_driver(table)?;
            let p = &cfg.params;
            let need = match cfg.model.as_str() {
                "ma1" => 1,
                "sv" => 3,
                "gk" => 4,
                other => return Err(CliError::Config(format!("unknown model `{other}` (expected ma1, sv or gk)"))),
            };
            if p.len() != need {
                return Err(CliError::Config(format!("model `{}` needs {need} params, got {}", cfg.model, p.len())));
            }
            let y = match cfg.model.as_str() {
                "ma1" => simulate_ma1(&Ma1Params::new(p[0])?, cfg.n, seed)?,
                "sv" => simulate_sv(&SvParams::new(p[0], p[1], p[2])?, cfg.n, seed)?,
                _ => simulate_gk(&GkParams::new(p[0], p[1], p[2], p[3])?, cfg.n, seed)?,
            };
            let mut a = Artifacts::new();
            a.insert("series.csv".into(), series_csv(&y));
            Ok(plain(a, effective(&cfg)))
        }
        Command::ExactPosterior => {
            let cfg: ex::ExactPosteriorConfig = config::parse_driver(table)?;
            Ok(plain(ex::run_exact_posterior(&cfg)?.artifacts, effective(&cfg)))
        }
        Command::Temper => {
            let cfg: ex::SvReplicationConfig = config::parse_driver(with_seed(table, seed))?;
            Ok(plain(ex::run_sv_replications(&cfg)?.artifacts, effective(&cfg)))
        }
        Command::Rbsl => {
            let cfg: ex::RbslConfig = config::parse_driver(with_seed(table, seed))?;
            Ok(plain(ex::run_rbsl(&cfg)?.artifacts, effective(&cfg)))
        }
        Command::Adjust => {
            let cfg: ex::CoverageSettings = config::parse_driver(with_seed(table, seed))?;
            if let Some(y) = input_series(rs, 2)? {
                let acfg = AdjustConfig {
                    n_draws: cfg.n_draws,
                    block_len: cfg.block_len,
                    n_boot: cfg.n_boot,
                    variant: if cfg.literal_transform {
                        TransformVariant::Literal
                    } else {
                        TransformVariant::Sandwich
                    },
                    level: cfg.level,
                    ..AdjustConfig::new(seed)
                };
                let rep = run_adjusted_pipeline(&y, &acfg)?;
                let mut a = Artifacts::new();
                a.insert("adjust_report.json".into(), format!("{:#}\n", rep.to_json()));
                a.insert("adjust_draws.csv".into(), rep.draws_csv());
                return Ok(plain(a, effective(&cfg)));
            }
            let rep = ex::run_coverage(&cfg)?;
            let failed = rep.table.failures();
            Ok(RunOutput {
                artifacts: rep.artifacts,
                config: effective(&cfg),
                failures: (failed > 0).then_some((failed, rep.table.rows.len())),
            })
        }
        Command::HessianScan => {
            let cfg: ex::HessianScanConfig = config::parse_driver(table)?;
            Ok(plain(ex::run_hessian_scan(&cfg)?, effective(&cfg)))
        }
        Command::Gk => {
            let cfg: ex::GkConfig = config::parse_driver(with_seed(table, seed))?;
            let rep = match input_series(rs, 100)? {
                Some(y) => ex::run_gk_on(&cfg, &y)?,
                None => ex::run_gk(&cfg)?,
            };
            Ok(plain(rep.artifacts, effective(&cfg)))
        }
        Command::AbcContrast => {
            let cfg: ex::AbcConfig = config::parse_driver(with_seed(table, seed))?;
            Ok(plain(ex::run_abc_contrast(&cfg)?.artifacts, effective(&cfg)))
        }
        Command::BvmCheck => {
            let cfg: ex::BvmConfig = config::parse_driver(with_seed(table, seed))?;
            Ok(plain(ex::run_bvm_check(&cfg)?.artifacts, effective(&cfg)))
        }
        Command::EstimatedSl => {
            let cfg: ex::EstimatedSlConfig = config::parse_driver(with_seed(table, seed))?;
            Ok(plain(ex::run_estimated_sl(&cfg)?.artifacts, effective(&cfg)))
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Merged config table and runner settings; command-line flags win over
/// `--set`, which wins over the file.
pub fn resolve(cli: &Cli) -> Result<(Table, RunnerSettings), CliError> {
    let mut table = config::load_table(cli.config.as_deref())?;
    for o in &cli.overrides {
        config::apply_override(&mut table, o)?;
    }
    let mut rs = config::take_runner_settings(&mut table)?;
    if let Some(s) = cli.seed {
        rs.seed = Some(s);
    }
    if let Some(t) = cli.threads {
        rs.threads = Some(t);
    }
    if let Some(o) = &cli.out {
        rs.out_dir = Some(o.display().to_string());
    }
    Ok((table, rs))
}

pub fn out_dir(rs: &RunnerSettings) -> PathBuf {
    rs.out_dir
        .clone()
        .or_else(|| std::env::var(OUT_DIR_ENV).ok().filter(|s| !s.is_empty()))
        .map_or_else(|| PathBuf::from("synlik-out"), PathBuf::from)
}

/// Manifest recording everything needed to regenerate the artifacts.
pub fn manifest(command: Command, rs: &RunnerSettings, out: &RunOutput) -> serde_json::Value {
    let runner = json!({
        "input": rs.input,
        "column": rs.column,
        "log_returns": rs.log_returns,
    });
    let hashed = json!({ "command": command.name(), "config": out.config, "runner": runner, "seed": rs.seed });
    let artifacts: BTreeMap<&str, String> = out
        .artifacts
        .iter()
        .map(|(k, v)| (k.as_str(), sha256_hex(v.as_bytes())))
        .collect();
    json!({
        "command": command.name(),
        "seed": rs.seed,
        "config": out.config,
        "runner": runner,
        "config_hash": sha256_hex(hashed.to_string().as_bytes()),
        "versions": { "synlik": synlik::VERSION, "synlik-cli": env!("CARGO_PKG_VERSION") },
        "artifacts": artifacts,
    })
}

pub fn write_artifacts(dir: &Path, artifacts: &Artifacts) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    for (name, body) in artifacts {
        std::fs::write(dir.join(name), body)?;
    }
    Ok(())
}

/// Full invocation: resolve, run, write artifacts and `manifest.json`.
/// Returns the output directory.
pub fn run(cli: &Cli) -> Result<PathBuf, (Option<PathBuf>, CliError)> {
    let (table, rs) = resolve(cli).map_err(|e| (cli.out.clone(), e))?;
    let dir = out_dir(&rs);
    let fail = |e: CliError| (Some(dir.clone()), e);
    let work = || execute(cli.command, table.clone(), &rs);
    let out = match rs.threads {
        Some(t) if t > 0 => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| fail(CliError::Config(format!("cannot build a {t}-thread pool: {e}"))))?
            .install(work),
        _ => work(),
    }
    .map_err(fail)?;
    write_artifacts(&dir, &out.artifacts).map_err(fail)?;
    let m = manifest(cli.command, &rs, &out);
    std::fs::write(dir.join("manifest.json"), format!("{m:#}\n")).map_err(|e| fail(e.into()))?;
    if let Some((failed, total)) = out.failures {
        return Err(fail(CliError::PartialFailure { failed, total }));
    }
    Ok(dir)
}
