use std::path::Path;

use synlik::models::TimeSeries;

use crate::CliError;

/// Reads one numeric column of a headed CSV file as a time series,
/// optionally converted to log returns `ln p_t - ln p_{t-1}`.
///
/// `min_rows` is the smallest accepted number of data rows (before the
/// return transform).
pub fn ingest_returns(
    path: &Path,
    column: &str,
    log_returns: bool,
    min_rows: usize,
) -> Result<TimeSeries, CliError> {
    let err = |msg: String| CliError::Input(format!("{}: {msg}", path.display()));
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| err(e.to_string()))?;
    let headers = reader.headers().map_err(|e| err(format!("line 1: {e}")))?.clone();
    if headers.is_empty() || headers.iter().all(|h| h.trim().is_empty()) {
        return Err(err("line 1: missing header row".into()));
    }
    let idx = headers
        .iter()
        .position(|h| h.trim() == column)
        .ok_or_else(|| err(format!("line 1: column `{column}` not found in header")))?;
    let mut values = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let line = row + 2;
        let rec = rec.map_err(|e| err(format!("line {line}: {e}")))?;
        let cell = rec
            .get(idx)
            .ok_or_else(|| err(format!("line {line} (row {}): missing column `{column}`", row + 1)))?;
        let v: f64 = cell.trim().parse().map_err(|_| {
            err(format!("line {line} (row {}): non-numeric value `{cell}` in column `{column}`", row + 1))
        })?;
        values.push(v);
    }
    if values.len() < min_rows {
        return Err(err(format!("{} data rows, at least {min_rows} required", values.len())));
    }
    let values = if log_returns {
        if let Some(i) = values.iter().position(|&p| !(p > 0.0)) {
            return Err(err(format!("row {}: log returns need positive prices, got {}", i + 1, values[i])));
        }
        values.windows(2).map(|w| w[1].ln() - w[0].ln()).collect()
    } else {
        values
    };
    TimeSeries::new(values, 0).map_err(|e| err(e.to_string()))
}
