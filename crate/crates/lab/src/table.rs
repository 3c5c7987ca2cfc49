//! Result tables: tab-separated for machines, aligned text for people.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{LabError, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(u64),
    Real(f64),
    Text(String),
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Cell::Int(v) => write!(f, "{v}"),
            Cell::Real(v) if v.is_nan() => f.write_str("nan"),
            Cell::Real(v) => write!(f, "{v:.6}"),
            Cell::Text(s) => f.write_str(s),
        }
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Cell {
        Cell::Int(v as u64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Cell {
        Cell::Int(v)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Cell {
        Cell::Real(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Cell {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Cell {
        Cell::Text(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Cell {
        Cell::Text(if v { "yes" } else { "no" }.into())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultsTable {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    pub config_hash: String,
    pub seed: u64,
}

impl ResultsTable {
    pub fn new(name: &str, columns: &[&str], config_hash: &str, seed: u64) -> ResultsTable {
        ResultsTable {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            config_hash: config_hash.to_string(),
            seed,
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row arity of table {}", self.name);
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Machine-readable form; deterministic, so it can be diffed and hashed.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("# {} config={} seed={}\n", self.name, self.config_hash, self.seed);
        out += &self.columns.join("\t");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            out += &cells.join("\t");
            out.push('\n');
        }
        out
    }

    pub fn to_text(&self) -> String {
        let rendered: Vec<Vec<String>> = self.rows.iter().map(|r| r.iter().map(|c| c.to_string()).collect()).collect();
        let widths: Vec<usize> = (0..self.columns.len())
            .map(|k| rendered.iter().map(|r| r[k].len()).chain([self.columns[k].len()]).max().unwrap())
            .collect();
        let mut out = String::new();
        writeln!(out, "{} (config {}, seed {})", self.name, self.config_hash, self.seed).unwrap();
        let line = |cells: &[String], out: &mut String| {
            let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
            writeln!(out, "{}", padded.join("  ")).unwrap();
        };
        line(&self.columns, &mut out);
        writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * widths.len().saturating_sub(1))).unwrap();
        for r in &rendered {
            line(r, &mut out);
        }
        out
    }

    /// Writes `<name>.tsv` and `<name>.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        let tsv = dir.join(format!("{}.tsv", self.name));
        let txt = dir.join(format!("{}.txt", self.name));
        write_file(&tsv, &self.to_tsv())?;
        write_file(&txt, &self.to_text())?;
        Ok((tsv, txt))
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| LabError::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| LabError::io(path, e))
}
