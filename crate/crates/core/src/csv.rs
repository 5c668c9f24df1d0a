//! Minimal CSV writing: mandatory header, LF line endings, shortest
//! round-trip float formatting.

use std::fmt::Write;

/// Shortest string that parses back to exactly `x`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

/// Accumulates rows of an in-memory CSV table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvTable {
    columns: usize,
    buf: String,
}

impl CsvTable {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let mut buf = String::new();
        for (i, h) in header.iter().enumerate() {
            if i > 0 {
                buf.push(',');
            }
            buf.push_str(&escape(h.as_ref()));
        }
        buf.push('\n');
        Self {
            columns: header.len(),
            buf,
        }
    }

    /// Appends a row; panics if the arity does not match the header.
    pub fn row<S: AsRef<str>>(&mut self, cells: &[S]) {
        assert_eq!(cells.len(), self.columns, "CSV row arity mismatch");
        for (i, c) in cells.iter().enumerate() {
            if i > 0 {
                self.buf.push(',');
            }
            self.buf.push_str(&escape(c.as_ref()));
        }
        self.buf.push('\n');
    }

    pub fn numeric_row(&mut self, cells: &[f64]) {
        let s: Vec<String> = cells.iter().map(|&v| fmt_f64(v)).collect();
        self.row(&s);
    }

    pub fn finish(self) -> String {
        self.buf
    }
}

fn escape(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        let mut out = String::with_capacity(s.len() + 2);
        out.push('"');
        for ch in s.chars() {
            if ch == '"' {
                out.push('"');
            }
            out.push(ch);
        }
        out.push('"');
        out
    } else {
        s.to_string()
    }
}

/// Long-format metrics table: `experiment,method,n,metric,value`.
#[derive(Debug, Clone)]
pub struct LongTable {
    table: CsvTable,
}

impl Default for LongTable {
    fn default() -> Self {
        Self {
            table: CsvTable::new(&["experiment", "method", "n", "metric", "value"]),
        }
    }
}

impl LongTable {
    pub fn push(&mut self, experiment: &str, method: &str, n: usize, metric: &str, value: f64) {
        let mut n_s = String::new();
        let _ = write!(n_s, "{n}");
        self.table
            .row(&[experiment, method, &n_s, metric, &fmt_f64(value)]);
    }

    pub fn finish(self) -> String {
        self.table.finish()
    }
}
