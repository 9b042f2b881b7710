//! Long-form CSV tables with a `#`-prefixed manifest block.

use std::fmt::Write as _;
use std::path::Path;

/// Column-oriented table; every cell is pre-formatted text.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CsvTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(columns: &[&str]) -> Self {
        CsvTable { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    pub fn push_values(&mut self, row: &[f64]) {
        self.push(row.iter().map(|v| fmt_f64(*v)).collect());
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        self.rows.iter().map(|r| r[i].parse().ok()).collect()
    }
}

/// Shortest round-trip representation.
pub fn fmt_f64(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    format!("{v}")
}

pub type Manifest = Vec<(String, String)>;

pub fn render_csv(manifest: &[(String, String)], table: &CsvTable) -> String {
    let mut s = String::new();
    for (k, v) in manifest {
        let _ = writeln!(s, "# {k} = {v}");
    }
    let _ = writeln!(s, "{}", table.columns.join(","));
    for r in &table.rows {
        let _ = writeln!(s, "{}", r.join(","));
    }
    s
}

pub fn write_csv(path: &Path, manifest: &[(String, String)], table: &CsvTable) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, render_csv(manifest, table))
}

/// Parses a rendered table back; manifest lines are returned separately.
pub fn parse_csv(text: &str) -> (Manifest, CsvTable) {
    let mut manifest = Vec::new();
    let mut table = CsvTable::default();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("# ") {
            if let Some((k, v)) = rest.split_once(" = ") {
                manifest.push((k.to_string(), v.to_string()));
            }
        } else if table.columns.is_empty() {
            table.columns = line.split(',').map(str::to_string).collect();
        } else if !line.is_empty() {
            table.rows.push(line.split(',').map(str::to_string).collect());
        }
    }
    (manifest, table)
}
