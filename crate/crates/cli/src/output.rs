//! CSV writing and reading. Numbers are printed with 17 significant digits so
//! every binary64 value survives a round trip.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{CliError, CliResult};

pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Builds CSV text in memory; written in one go by [`Csv::save`].
#[derive(Debug, Clone, Default)]
pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(columns: &[String]) -> Self {
        let mut text = columns.join(",");
        text.push('\n');
        Self { text }
    }

    pub fn row(&mut self, values: &[f64]) {
        let line: Vec<String> = values.iter().map(|&v| num(v)).collect();
        let _ = writeln!(self.text, "{}", line.join(","));
    }

    /// Preformatted cells.
    pub fn cells(&mut self, cells: &[String]) {
        let _ = writeln!(self.text, "{}", cells.join(","));
    }

    /// Row led by an integer column.
    pub fn indexed_row(&mut self, index: usize, values: &[f64]) {
        let mut line = index.to_string();
        for &v in values {
            line.push(',');
            line.push_str(&num(v));
        }
        let _ = writeln!(self.text, "{line}");
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        write_text(path, &self.text)
    }
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn ensure_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

/// One named column of a CSV file with a header row.
pub fn read_column(path: &Path, column: &str) -> CliResult<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| CliError::Io(format!("{}: empty file", path.display())))?;
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    let idx = names.iter().position(|&n| n == column).ok_or_else(|| {
        CliError::Usage(format!(
            "column '{column}' not found in {} (columns: {})",
            path.display(),
            names.join(", ")
        ))
    })?;
    lines
        .map(|(i, l)| {
            l.split(',')
                .nth(idx)
                .and_then(|t| t.trim().parse::<f64>().ok())
                .ok_or_else(|| {
                    CliError::Io(format!(
                        "{}:{}: bad value in column '{column}'",
                        path.display(),
                        i + 1
                    ))
                })
        })
        .collect()
}
