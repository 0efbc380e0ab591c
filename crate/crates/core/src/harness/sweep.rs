//! Cartesian parameter sweeps over configuration keys.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::experiment::{prepare, run_prepared, Prepared, RunRecord};
use super::report::{rows_of, write_rows_csv, ReportRow};
use crate::error::{Error, Result};

/// Ordered list of `key → values`; the first key varies slowest.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Grid(pub Vec<(String, Vec<String>)>);

impl Grid {
    /// Parses `key = v1, v2, ...` lines (or `key=v1,v2` arguments).
    pub fn parse<'a>(lines: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut axes = Vec::new();
        for line in lines {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, values) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("grid entry `{line}` is not `key = values`")))?;
            let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).collect();
            if values.iter().any(String::is_empty) {
                return Err(Error::Config(format!("grid key `{}` has an empty value", key.trim())));
            }
            axes.push((key.trim().to_string(), values));
        }
        Ok(Grid(axes))
    }

    /// Every grid point in order, as `(key, value)` overrides.
    pub fn points(&self) -> Vec<Vec<(String, String)>> {
        let mut points = vec![Vec::new()];
        for (key, values) in &self.0 {
            points = points
                .into_iter()
                .flat_map(|p| {
                    values.iter().map(move |v| {
                        let mut q = p.clone();
                        q.push((key.clone(), v.clone()));
                        q
                    })
                })
                .collect();
        }
        points
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFailure {
    pub run_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub records: Vec<RunRecord>,
    /// Sorted by grid point, then epoch.
    pub rows: Vec<ReportRow>,
    pub failures: Vec<SweepFailure>,
}

pub fn cell_id(index: usize) -> String {
    format!("cell_{index:03}")
}

/// Runs every grid point under `base.out/cell_NNN` and writes
/// `base.out/sweep.csv`. Cells sharing corpus and finetune settings share
/// one preparation. Failed cells are recorded and skipped.
pub fn sweep(base: &ExperimentConfig, grid: &Grid) -> Result<SweepTable> {
    let mut probe = base.clone();
    for (key, values) in &grid.0 {
        if key == "out" {
            return Err(Error::Config("`out` cannot be swept".into()));
        }
        probe.set(key, &values[0])?;
    }

    let cells: Vec<(String, Result<ExperimentConfig>)> = grid
        .points()
        .into_iter()
        .enumerate()
        .map(|(i, point)| {
            let id = cell_id(i);
            let mut c = base.clone();
            c.out = base.out.join(&id);
            let built = point
                .iter()
                .try_for_each(|(k, v)| c.set(k, v))
                .and_then(|_| c.validate())
                .map(|_| c);
            (id, built)
        })
        .collect();

    let mut prep_keys: BTreeMap<String, &ExperimentConfig> = BTreeMap::new();
    for c in cells.iter().filter_map(|(_, c)| c.as_ref().ok()) {
        prep_keys.entry(c.preparation_text()).or_insert(c);
    }
    let prepared: BTreeMap<String, Result<Prepared>> = prep_keys
        .into_par_iter()
        .map(|(k, c)| (k, prepare(c)))
        .collect();

    let outcomes: Vec<(String, Result<RunRecord>)> = cells
        .par_iter()
        .map(|(id, c)| {
            let result = match c {
                Ok(c) => match &prepared[&c.preparation_text()] {
                    Ok(p) => run_prepared(c, p, &c.out),
                    Err(e) => Err(Error::Training(e.to_string())),
                },
                Err(e) => Err(Error::Config(e.to_string())),
            };
            (id.clone(), result)
        })
        .collect();

    let mut table = SweepTable {
        records: Vec::new(),
        rows: Vec::new(),
        failures: Vec::new(),
    };
    for (run_id, outcome) in outcomes {
        match outcome {
            Ok(r) => {
                table.rows.extend(rows_of(&r));
                table.records.push(r);
            }
            Err(e) => table.failures.push(SweepFailure {
                run_id,
                error: e.to_string(),
            }),
        }
    }
    std::fs::create_dir_all(&base.out)?;
    write_sweep(&base.out, &table)?;
    Ok(table)
}

pub fn write_sweep(dir: &Path, table: &SweepTable) -> Result<()> {
    write_rows_csv(&dir.join("sweep.csv"), &table.rows)?;
    let mut w = csv::Writer::from_path(dir.join("failures.csv"))?;
    w.write_record(["run_id", "error"])?;
    for f in &table.failures {
        w.write_record([&f.run_id, &f.error])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_points_are_cartesian_in_order() {
        let g = Grid::parse(["a = 1, 2", "b=x,y,z"]).unwrap();
        let pts = g.points();
        assert_eq!(pts.len(), 6);
        assert_eq!(pts[0], vec![("a".into(), "1".into()), ("b".into(), "x".into())]);
        assert_eq!(pts[5], vec![("a".into(), "2".into()), ("b".into(), "z".into())]);
        assert_eq!(Grid::default().points(), vec![Vec::new()]);
    }

    #[test]
    fn grid_rejects_malformed_entries() {
        assert!(Grid::parse(["novalue"]).is_err());
        assert!(Grid::parse(["a = 1,,2"]).is_err());
    }

    #[test]
    fn unknown_grid_key_is_rejected() {
        let base = ExperimentConfig::default();
        let grid = Grid::parse(["nope = 1"]).unwrap();
        assert!(sweep(&base, &grid).unwrap_err().is_validation());
    }
}
