//! TOML experiment configs with `key=value` overrides.

use std::path::Path;

use serde::de::DeserializeOwned;
use toml::{Table, Value};

use crate::CliError;

/// Keys consumed by the runner itself rather than by an experiment driver.
pub const RUNNER_KEYS: [&str; 6] = ["seed", "out_dir", "threads", "input", "column", "log_returns"];

/// Reads a config file; no path gives an empty table.
pub fn load_table(path: Option<&Path>) -> Result<Table, CliError> {
    let Some(path) = path else {
        return Ok(Table::new());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_table(&text)
}

pub fn parse_table(text: &str) -> Result<Table, CliError> {
    text.parse::<Table>()
        .map_err(|e| CliError::Config(e.to_string().trim_end().to_string()))
}

/// Parses a right-hand side as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Applies one `key=value` override; later overrides win.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(CliError::Config(format!("override `{assignment}` has an empty key")));
    }
    table.insert(key.to_string(), parse_value(raw.trim()));
    Ok(())
}

/// Settings of the runner itself, removed from the table before the
/// driver config is parsed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunnerSettings {
    pub seed: Option<u64>,
    pub out_dir: Option<String>,
    pub threads: Option<usize>,
    pub input: Option<String>,
    pub column: Option<String>,
    pub log_returns: bool,
}

fn take_int(table: &mut Table, key: &str) -> Result<Option<i64>, CliError> {
    match table.remove(key) {
        None => Ok(None),
        Some(Value::Integer(i)) => Ok(Some(i)),
        Some(v) => Err(CliError::Config(format!("key `{key}` must be an integer, got {v}"))),
    }
}

fn take_string(table: &mut Table, key: &str) -> Result<Option<String>, CliError> {
    match table.remove(key) {
        None => Ok(None),
        Some(Value::String(s)) => Ok(Some(s)),
        Some(v) => Err(CliError::Config(format!("key `{key}` must be a string, got {v}"))),
    }
}

pub fn take_runner_settings(table: &mut Table) -> Result<RunnerSettings, CliError> {
    let seed = take_int(table, "seed")?
        .map(|s| u64::try_from(s).map_err(|_| CliError::Config(format!("seed must be non-negative, got {s}"))))
        .transpose()?;
    let threads = take_int(table, "threads")?
        .map(|t| usize::try_from(t).map_err(|_| CliError::Config(format!("threads must be non-negative, got {t}"))))
        .transpose()?;
    let log_returns = match table.remove("log_returns") {
        None => false,
        Some(Value::Boolean(b)) => b,
        Some(v) => return Err(CliError::Config(format!("key `log_returns` must be a boolean, got {v}"))),
    };
    Ok(RunnerSettings {
        seed,
        out_dir: take_string(table, "out_dir")?,
        threads,
        input: take_string(table, "input")?,
        column: take_string(table, "column")?,
        log_returns,
    })
}

/// Deserializes a driver config; unknown keys are rejected by name.
pub fn parse_driver<T: DeserializeOwned>(table: Table) -> Result<T, CliError> {
    Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(e.message().trim_end().to_string()))
}
