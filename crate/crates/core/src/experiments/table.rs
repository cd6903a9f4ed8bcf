use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

/// Win rate of one cell: mean and sample std over seeds, as fractions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mean: f64,
    pub std: f64,
}

/// A small results table, rows keyed by the swept value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub title: String,
    pub key: String,
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<Cell>)>,
}

impl Table {
    pub fn new(title: &str, key: &str, columns: &[&str]) -> Self {
        Table {
            title: title.to_string(),
            key: key.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, label: &str, cells: Vec<Cell>) {
        debug_assert_eq!(cells.len(), self.columns.len());
        self.rows.push((label.to_string(), cells));
    }

    pub fn get(&self, label: &str, column: usize) -> Option<Cell> {
        self.rows.iter().find(|(l, _)| l == label).and_then(|(_, c)| c.get(column).copied())
    }

    /// Tab-separated: key, then `<column>` and `<column>_std` in percent.
    pub fn write_tsv(&self, path: &Path) -> std::io::Result<()> {
        let mut header = vec![self.key.clone()];
        for c in &self.columns {
            header.push(c.replace(' ', "_"));
            header.push(format!("{}_std", c.replace(' ', "_")));
        }
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|(label, cells)| {
                let mut r = vec![label.clone()];
                for c in cells {
                    r.push(format!("{:.2}", 100.0 * c.mean));
                    r.push(format!("{:.2}", 100.0 * c.std));
                }
                r
            })
            .collect();
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        crate::eval::write_series(path, &header, &rows)
    }
}

impl fmt::Display for Table {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.title)?;
        write!(f, "{:<10}", self.key)?;
        for c in &self.columns {
            write!(f, " {c:>24}")?;
        }
        writeln!(f)?;
        for (label, cells) in &self.rows {
            write!(f, "{label:<10}")?;
            for c in cells {
                write!(f, " {:>24}", format!("{:.2} ± {:.2}", 100.0 * c.mean, 100.0 * c.std))?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}
