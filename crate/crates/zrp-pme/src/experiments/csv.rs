//! CSV output: one file per table, header row, comma separators, LF line
//! endings, floats at 17 significant digits. Every run directory gets a
//! manifest recording the config hash, seed and crate version.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::Result;

#[derive(Debug, Clone)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            columns: columns.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.columns.len(), "row width mismatch");
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write_to(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("{}.csv", self.name));
        let mut f = std::fs::File::create(&path)?;
        f.write_all(self.to_csv().as_bytes())?;
        Ok(path)
    }
}

/// Reproducibility manifest: experiment name, config hash, seed, version.
pub fn write_manifest(
    dir: &Path,
    experiment: &str,
    config_text: &str,
    config_hash: u64,
    seed: u64,
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join("manifest.txt");
    let mut f = std::fs::File::create(&path)?;
    writeln!(f, "experiment = {experiment}")?;
    writeln!(f, "config_hash = {config_hash:016x}")?;
    writeln!(f, "seed = {seed}")?;
    writeln!(f, "version = zrp-pme {}", env!("CARGO_PKG_VERSION"))?;
    writeln!(f, "--- config ---")?;
    f.write_all(config_text.as_bytes())?;
    Ok(path)
}

/// Plain-text plotting commands (gnuplot dialect) for the emitted tables.
pub fn write_plot_script(dir: &Path, tables: &[&Table]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join("plots.gp");
    let mut f = std::fs::File::create(&path)?;
    writeln!(f, "set datafile separator ','")?;
    writeln!(f, "set key autotitle columnhead")?;
    for t in tables {
        writeln!(f, "set terminal pngcairo; set output '{}.png'", t.name)?;
        if t.columns.len() >= 2 {
            writeln!(f, "plot '{}.csv' using 1:2 with linespoints", t.name)?;
        }
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_format_full_precision_lf() {
        let mut t = Table::new("demo", &["a", "b"]);
        t.push(vec![1.0 / 3.0, 2.0]);
        let s = t.to_csv();
        assert!(s.starts_with("a,b\n"));
        assert!(s.contains("3.3333333333333331e-1"));
        assert!(!s.contains('\r'));
    }
}
