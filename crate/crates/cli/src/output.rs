use std::path::Path;

use crate::error::CliError;

/// Shortest representation that round-trips, so identical inputs give
/// identical bytes.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

/// `5.0 -> "5.000"`, used in per-time file names.
pub fn time_tag(t: f64) -> String {
    format!("{t:.3}")
}

/// In-memory CSV table, written in one go.
pub struct CsvTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn row<I: IntoIterator<Item = String>>(&mut self, fields: I) {
        let r: Vec<String> = fields.into_iter().collect();
        debug_assert_eq!(r.len(), self.header.len());
        self.rows.push(r);
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(&self.header).map_err(|e| csv_err(path, e))?;
        for r in &self.rows {
            w.write_record(r).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| CliError::io(path, e))
    }
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::Config(format!("{}: {other:?}", path.display())),
    }
}

/// Reads a CSV with a header into rows of strings.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(String::from)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        rows.push(rec.iter().map(String::from).collect());
    }
    Ok((header, rows))
}
