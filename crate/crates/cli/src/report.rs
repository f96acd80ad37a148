//! Tabular reports: RFC 4180 CSV, a JSON sidecar with sorted keys, and a plot recipe.

use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

/// Shortest round-trip text; exponent form outside `[1e-4, 1e6)`.
pub fn fmt_num(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e6).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

impl Cell {
    fn text(&self) -> String {
        match self {
            Cell::Num(x) => fmt_num(*x),
            Cell::Int(i) => i.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }
}

/// One line of a plot recipe: `y` against `x`, optionally on log axes.
#[derive(Debug, Clone)]
pub struct Series {
    pub x: &'static str,
    pub y: &'static str,
    pub log_x: bool,
    pub log_y: bool,
}

impl Series {
    pub fn new(x: &'static str, y: &'static str) -> Self {
        Self { x, y, log_x: false, log_y: false }
    }

    pub fn log_y(mut self) -> Self {
        self.log_y = true;
        self
    }
}

/// `(file suffix, columns, rows)`.
pub type Table = (&'static str, Vec<&'static str>, Vec<Vec<Cell>>);

#[derive(Debug, Clone)]
pub struct Report {
    pub command: &'static str,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
    /// Command-specific results that are not per-row (fits, stop reasons).
    pub summary: Map<String, Value>,
    pub plots: Vec<Series>,
    /// Extra CSV tables written next to the main one, as `(file suffix, columns, rows)`.
    pub extra: Vec<Table>,
    /// A numerical failure that ended the run after partial results were produced.
    pub failure: Option<mtlab::Error>,
}

impl Report {
    pub fn new(command: &'static str, columns: Vec<&'static str>) -> Self {
        Self { command, columns, rows: Vec::new(), summary: Map::new(), plots: Vec::new(), extra: Vec::new(), failure: None }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// First non-finite number, as `(table, row, column)`.
    pub fn scan_non_finite(&self) -> Option<(String, usize, String)> {
        let tables = std::iter::once((self.command.to_string(), &self.columns, &self.rows))
            .chain(self.extra.iter().map(|(s, c, r)| (format!("{}_{s}", self.command), c, r)));
        for (name, cols, rows) in tables {
            for (i, row) in rows.iter().enumerate() {
                for (c, cell) in cols.iter().zip(row) {
                    if let Cell::Num(x) = cell {
                        if !x.is_finite() {
                            return Some((name, i, c.to_string()));
                        }
                    }
                }
            }
        }
        let mut bad = None;
        scan_value(&Value::Object(self.summary.clone()), "summary", &mut bad);
        bad.map(|path| (self.command.to_string(), 0, path))
    }
}

// serde_json maps non-finite floats to null; a null in the summary is treated as a NaN.
fn scan_value(v: &Value, path: &str, out: &mut Option<String>) {
    if out.is_some() {
        return;
    }
    match v {
        Value::Null => *out = Some(path.to_string()),
        Value::Array(a) => a.iter().enumerate().for_each(|(i, x)| scan_value(x, &format!("{path}[{i}]"), out)),
        Value::Object(m) => m.iter().for_each(|(k, x)| scan_value(x, &format!("{path}.{k}"), out)),
        _ => {}
    }
}

fn write_csv(path: &Path, columns: &[&str], rows: &[Vec<Cell>]) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::IoFailure(format!("{}: {e}", path.display()));
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_path(path).map_err(io)?;
    w.write_record(columns).map_err(io)?;
    for row in rows {
        w.write_record(row.iter().map(Cell::text)).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::IoFailure(format!("{}: {e}", path.display())))
}

fn plot_recipe(report: &Report, csv_name: &str) -> String {
    let mut s = format!("# {} plot recipe\n# data: {csv_name} (comma separated, one header row)\n", report.command);
    for series in &report.plots {
        let col = |name: &str| report.columns.iter().position(|c| *c == name).map(|i| i + 1).unwrap_or(0);
        s.push_str(&format!(
            "series: x={} y={} log_x={} log_y={}\n",
            series.x, series.y, series.log_x, series.log_y
        ));
        let mut g = String::from("gnuplot: set datafile separator ','; ");
        if series.log_x {
            g.push_str("set logscale x; ");
        }
        if series.log_y {
            g.push_str("set logscale y; ");
        }
        g.push_str(&format!(
            "plot '{csv_name}' every ::1 using {}:{} with linespoints title '{}'\n",
            col(series.x),
            col(series.y),
            series.y
        ));
        s.push_str(&g);
    }
    s
}

pub fn sidecar(command: &str, config: Value, report: Option<&Report>, error: Option<(&str, String)>) -> Value {
    let mut doc = Map::new();
    doc.insert("command".into(), json!(command));
    doc.insert("config".into(), config);
    doc.insert("tool".into(), json!("mtlab"));
    doc.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
    if let Some(r) = report {
        doc.insert("columns".into(), json!(r.columns));
        doc.insert("rows".into(), json!(r.rows.len()));
        doc.insert("summary".into(), Value::Object(r.summary.clone()));
    }
    if let Some((kind, message)) = error {
        doc.insert("error".into(), json!({ "kind": kind, "message": message }));
    }
    Value::Object(doc)
}

pub fn write_json(path: &Path, doc: &Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(doc).map_err(|e| CliError::IoFailure(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::IoFailure(format!("{}: {e}", path.display())))
}

/// Write `<command>.csv`, extra tables, `<command>.plot.txt`; returns the written paths.
pub fn write_tables(dir: &Path, report: &Report) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::IoFailure(format!("{}: {e}", dir.display())))?;
    let mut written = Vec::new();
    let csv_name = format!("{}.csv", report.command);
    let path = dir.join(&csv_name);
    write_csv(&path, &report.columns, &report.rows)?;
    written.push(path);
    for (suffix, cols, rows) in &report.extra {
        let path = dir.join(format!("{}_{suffix}.csv", report.command));
        write_csv(&path, cols, rows)?;
        written.push(path);
    }
    if !report.plots.is_empty() {
        let path = dir.join(format!("{}.plot.txt", report.command));
        std::fs::write(&path, plot_recipe(report, &csv_name))
            .map_err(|e| CliError::IoFailure(format!("{}: {e}", path.display())))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for x in [0.0, 1.5, -2.25e-9, 12.566370614359172, 3.0e12, 1e-4] {
            assert_eq!(fmt_num(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_num(1e-5), "1e-5");
    }

    #[test]
    fn non_finite_cells_are_found() {
        let mut r = Report::new("t", vec!["a", "b"]);
        r.push(vec![1.0.into(), "x".into()]);
        r.push(vec![f64::NAN.into(), "y".into()]);
        assert_eq!(r.scan_non_finite(), Some(("t".to_string(), 1, "a".to_string())));
        r.rows.pop();
        r.summary.insert("fit".into(), json!({ "c0": f64::INFINITY }));
        assert!(r.scan_non_finite().unwrap().2.contains("c0"));
    }

    #[test]
    fn csv_quotes_per_rfc4180() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.csv");
        write_csv(&p, &["name", "v"], &[vec!["a,\"b\"".into(), 1.0.into()]]).unwrap();
        let s = std::fs::read_to_string(p).unwrap();
        assert_eq!(s, "name,v\r\n\"a,\"\"b\"\"\",1\r\n");
    }
}
