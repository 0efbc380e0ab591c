//! JSON and CSV reports.
//!
//! CSV columns, in order:
//! `run_id,epoch,objective,criterion,beta,beta1,beta2,lambda,es_retain,es_unlearn,forget_quality,model_utility,verbmem,knowmem,privleak,utilpres,accuracy`.
//! Metrics that were not computed are empty cells.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::experiment::RunRecord;
use crate::error::Result;
use crate::objectives::StepTelemetry;

pub const CSV_COLUMNS: [&str; 17] = [
    "run_id",
    "epoch",
    "objective",
    "criterion",
    "beta",
    "beta1",
    "beta2",
    "lambda",
    "es_retain",
    "es_unlearn",
    "forget_quality",
    "model_utility",
    "verbmem",
    "knowmem",
    "privleak",
    "utilpres",
    "accuracy",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run_id: String,
    pub epoch: usize,
    pub objective: String,
    pub criterion: String,
    pub beta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lambda: f64,
    pub es_retain: Option<f64>,
    pub es_unlearn: Option<f64>,
    pub forget_quality: Option<f64>,
    pub model_utility: Option<f64>,
    pub verbmem: Option<f64>,
    pub knowmem: Option<f64>,
    pub privleak: Option<f64>,
    pub utilpres: Option<f64>,
    pub accuracy: Option<f64>,
}

/// One row per epoch of a run.
pub fn rows_of(record: &RunRecord) -> Vec<ReportRow> {
    record
        .epochs
        .iter()
        .map(|e| {
            let m = &e.metrics;
            ReportRow {
                run_id: record.run_id.clone(),
                epoch: e.epoch,
                objective: record.objective.clone(),
                criterion: record.criterion.clone(),
                beta: record.beta,
                beta1: record.beta1,
                beta2: record.beta2,
                lambda: record.lambda,
                es_retain: m.es_retain,
                es_unlearn: m.es_unlearn,
                forget_quality: m.forget_quality,
                model_utility: m.model_utility,
                verbmem: m.verbmem,
                knowmem: m.knowmem,
                privleak: m.privleak,
                utilpres: m.utilpres,
                accuracy: m.accuracy,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            _ => Err(crate::Error::Config(format!("unknown report format `{s}`"))),
        }
    }
}

pub fn write_record_json(path: &Path, record: &RunRecord) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(record)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_record_json(path: &Path) -> Result<RunRecord> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

pub fn write_rows_json(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(rows)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_rows_json(path: &Path) -> Result<Vec<ReportRow>> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

pub fn write_rows_csv(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    if rows.is_empty() {
        w.write_record(CSV_COLUMNS)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows_csv(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}

/// Writes rows in the requested format.
pub fn emit_report(path: &Path, rows: &[ReportRow], format: ReportFormat) -> Result<()> {
    match format {
        ReportFormat::Json => write_rows_json(path, rows),
        ReportFormat::Csv => write_rows_csv(path, rows),
    }
}

pub fn write_telemetry_csv(path: &Path, telemetry: &[StepTelemetry]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    if telemetry.is_empty() {
        w.write_record(["step", "forget_loss", "retain_loss", "grad_norm", "w_min", "w_mean", "w_max"])?;
    }
    for t in telemetry {
        w.serialize(t)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_telemetry_csv(path: &Path) -> Result<Vec<StepTelemetry>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::experiment::EpochRecord;
    use crate::metrics::MetricReport;

    fn record() -> RunRecord {
        RunRecord {
            run_id: "cell_000".into(),
            config: String::new(),
            config_hash: "00".into(),
            objective: "reweighted_ga".into(),
            criterion: "simsat".into(),
            beta: 0.1,
            beta1: 5.0,
            beta2: 1.0,
            lambda: 1.0,
            finetune_nll: vec![3.0, 1.0 / 3.0],
            gold_nll: vec![],
            epochs: vec![
                EpochRecord {
                    epoch: 0,
                    metrics: MetricReport {
                        es_retain: Some(0.9),
                        privleak: Some(-12.5),
                        ..Default::default()
                    },
                    checkpoint: Some("checkpoints/epoch_000.ckpt".into()),
                },
                EpochRecord {
                    epoch: 1,
                    metrics: MetricReport::default(),
                    checkpoint: None,
                },
            ],
            telemetry: vec![StepTelemetry {
                step: 0,
                forget_loss: -1.25,
                retain_loss: 0.0,
                grad_norm: 0.1 + 0.2,
                w_min: 0.0,
                w_mean: 0.5,
                w_max: 1.0,
            }],
            stopped_at: None,
        }
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        let rec = record();
        write_record_json(&path, &rec).unwrap();
        assert_eq!(read_record_json(&path).unwrap(), rec);
        let rows = rows_of(&rec);
        emit_report(&dir.path().join("rows.json"), &rows, ReportFormat::Json).unwrap();
        assert_eq!(read_rows_json(&dir.path().join("rows.json")).unwrap(), rows);
    }

    #[test]
    fn csv_round_trip_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let rows = rows_of(&record());
        emit_report(&path, &rows, ReportFormat::Csv).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_COLUMNS.join(","));
        assert_eq!(read_rows_csv(&path).unwrap(), rows);
        let tpath = dir.path().join("t.csv");
        write_telemetry_csv(&tpath, &record().telemetry).unwrap();
        assert_eq!(read_telemetry_csv(&tpath).unwrap(), record().telemetry);
    }

    #[test]
    fn empty_csv_still_has_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_rows_csv(&path, &[]).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().trim(), CSV_COLUMNS.join(","));
        assert!(read_rows_csv(&path).unwrap().is_empty());
    }
}
