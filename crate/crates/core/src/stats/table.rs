use std::collections::{HashMap, HashSet};
use std::path::Path;

use crate::entrainment::{ConvergenceVars, VARIABLE_NAMES};
use crate::{Error, Result};

/// Named numeric columns keyed by `dialogue_id`; `None` marks a missing
/// cell.
#[derive(Clone, Debug, PartialEq)]
pub struct OutcomeTable {
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

impl OutcomeTable {
    pub fn new(columns: Vec<String>, rows: Vec<(String, Vec<Option<f64>>)>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (key, vals) in &rows {
            if !seen.insert(key.as_str()) {
                return Err(Error::Validation(format!("duplicate dialogue_id {key}")));
            }
            if vals.len() != columns.len() {
                return Err(Error::shape(
                    "OutcomeTable",
                    format!("row {key} has {} cells for {} columns", vals.len(), columns.len()),
                ));
            }
        }
        Ok(Self { columns, rows })
    }

    /// The `Max, Min, absMax, absMin` columns of convergence results.
    pub fn from_convergence(rows: &[ConvergenceVars]) -> Result<Self> {
        Self::new(
            VARIABLE_NAMES.iter().map(|s| s.to_string()).collect(),
            rows.iter()
                .map(|r| (r.dialogue_id.clone(), r.variables().to_vec()))
                .collect(),
        )
    }

    /// Reads a CSV with a `dialogue_id` column and numeric columns; empty
    /// cells are missing.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut rdr = csv::Reader::from_path(path)?;
        let headers = rdr.headers()?.clone();
        let key_col = headers
            .iter()
            .position(|h| h == "dialogue_id")
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("{}: no dialogue_id column", path.display()),
            })?;
        let columns: Vec<String> = headers
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != key_col)
            .map(|(_, h)| h.to_string())
            .collect();
        let mut rows = Vec::new();
        for (n, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = n + 2;
            let mut vals = Vec::with_capacity(columns.len());
            for (i, cell) in rec.iter().enumerate() {
                if i == key_col {
                    continue;
                }
                let cell = cell.trim();
                vals.push(if cell.is_empty() {
                    None
                } else {
                    let v: f64 = cell.parse().map_err(|_| Error::Parse {
                        line,
                        message: format!("{}: invalid number {cell:?}", path.display()),
                    })?;
                    if !v.is_finite() {
                        return Err(Error::Parse {
                            line,
                            message: format!("{}: non-finite value {cell:?}", path.display()),
                        });
                    }
                    Some(v)
                });
            }
            rows.push((rec[key_col].to_string(), vals));
        }
        Self::new(columns, rows)
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Columns of both tables side by side, rows in `self` order. With
    /// `strict`, ids present in only one table are an error listing them;
    /// otherwise they are dropped. An empty result is always an error.
    pub fn join(&self, other: &OutcomeTable, strict: bool) -> Result<OutcomeTable> {
        let index: HashMap<&str, usize> = other
            .rows
            .iter()
            .enumerate()
            .map(|(i, (k, _))| (k.as_str(), i))
            .collect();
        if strict {
            let ours: HashSet<&str> = self.rows.iter().map(|(k, _)| k.as_str()).collect();
            let only_left: Vec<&str> = self
                .rows
                .iter()
                .map(|(k, _)| k.as_str())
                .filter(|k| !index.contains_key(k))
                .collect();
            let only_right: Vec<&str> = other
                .rows
                .iter()
                .map(|(k, _)| k.as_str())
                .filter(|k| !ours.contains(k))
                .collect();
            if !only_left.is_empty() || !only_right.is_empty() {
                return Err(Error::Validation(format!(
                    "dialogue ids do not match: only in first table [{}], only in second table [{}]",
                    only_left.join(", "),
                    only_right.join(", ")
                )));
            }
        }
        let mut columns = self.columns.clone();
        for c in &other.columns {
            if columns.contains(c) {
                return Err(Error::Validation(format!("column {c} appears in both tables")));
            }
            columns.push(c.clone());
        }
        let rows: Vec<_> = self
            .rows
            .iter()
            .filter_map(|(k, a)| {
                index.get(k.as_str()).map(|&i| {
                    let mut v = a.clone();
                    v.extend(other.rows[i].1.iter().copied());
                    (k.clone(), v)
                })
            })
            .collect();
        if rows.is_empty() {
            return Err(Error::Validation("join on dialogue_id is empty".into()));
        }
        Self::new(columns, rows)
    }

    /// Values of `cols` over rows where all of them are present.
    pub fn complete_columns(&self, cols: &[usize]) -> Vec<Vec<f64>> {
        let mut out = vec![Vec::new(); cols.len()];
        for (_, vals) in &self.rows {
            if cols.iter().all(|&c| vals[c].is_some()) {
                for (o, &c) in out.iter_mut().zip(cols) {
                    o.push(vals[c].expect("checked"));
                }
            }
        }
        out
    }
}
