//! The result CSV.
//!
//! Columns, in this order: `placement_id, trial, seed, classification,
//! iterations, detections, recoveries, unrecoverables, wall_time_s`.
//!
//! One row per (placement, trial), placement-major, followed by one summary
//! row per placement. Summary rows have `trial = summary`, carry the master
//! seed, `classification = success_rate=<rate>`, the mean iteration count,
//! total counters and the mean wall time. `wall_time_s` is empty unless
//! timing was requested, which keeps the file a pure function of config and
//! seed.

use std::io::{Read, Write};

use havens_core::cg::Classification;

use crate::experiment::ExperimentResult;
use crate::CliError;

pub const COLUMNS: [&str; 9] = [
    "placement_id",
    "trial",
    "seed",
    "classification",
    "iterations",
    "detections",
    "recoveries",
    "unrecoverables",
    "wall_time_s",
];

const SUMMARY_TRIAL: &str = "summary";
const RATE_PREFIX: &str = "success_rate=";

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRow {
    pub placement_id: String,
    pub trial: usize,
    pub seed: u64,
    pub classification: Classification,
    pub iterations: usize,
    pub detections: u64,
    pub recoveries: u64,
    pub unrecoverables: u64,
    pub wall_time_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub placement_id: String,
    pub master_seed: u64,
    pub success_rate: f64,
    pub mean_iterations: f64,
    pub detections: u64,
    pub recoveries: u64,
    pub unrecoverables: u64,
    pub mean_wall_time_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ResultRow {
    Trial(TrialRow),
    Summary(SummaryRow),
}

/// Rows for an experiment, trial rows first.
pub fn rows_from(result: &ExperimentResult, master_seed: u64, timing: bool) -> Vec<ResultRow> {
    let trials = result.records.iter().map(|r| {
        ResultRow::Trial(TrialRow {
            placement_id: r.placement_id.clone(),
            trial: r.trial,
            seed: r.seed,
            classification: r.outcome.classification,
            iterations: r.outcome.iterations,
            detections: r.outcome.stats.detections,
            recoveries: r.outcome.stats.recoveries,
            unrecoverables: r.outcome.stats.unrecoverables,
            wall_time_s: timing.then_some(r.wall_time_s),
        })
    });
    let summaries = result.summaries.iter().map(|s| {
        ResultRow::Summary(SummaryRow {
            placement_id: s.name.clone(),
            master_seed,
            success_rate: s.success_rate(),
            mean_iterations: s.mean_iterations,
            detections: s.detections,
            recoveries: s.recoveries,
            unrecoverables: s.unrecoverables,
            mean_wall_time_s: timing.then_some(s.mean_wall_time_s),
        })
    });
    trials.chain(summaries).collect()
}

fn time_field(t: Option<f64>) -> String {
    t.map(|t| format!("{t:.6}")).unwrap_or_default()
}

pub fn write_rows<W: Write>(out: W, rows: &[ResultRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COLUMNS)?;
    for row in rows {
        let record: [String; 9] = match row {
            ResultRow::Trial(t) => [
                t.placement_id.clone(),
                t.trial.to_string(),
                t.seed.to_string(),
                t.classification.label().to_string(),
                t.iterations.to_string(),
                t.detections.to_string(),
                t.recoveries.to_string(),
                t.unrecoverables.to_string(),
                time_field(t.wall_time_s),
            ],
            ResultRow::Summary(s) => [
                s.placement_id.clone(),
                SUMMARY_TRIAL.to_string(),
                s.master_seed.to_string(),
                format!("{RATE_PREFIX}{:.4}", s.success_rate),
                format!("{:.2}", s.mean_iterations),
                s.detections.to_string(),
                s.recoveries.to_string(),
                s.unrecoverables.to_string(),
                time_field(s.mean_wall_time_s),
            ],
        };
        w.write_record(&record)?;
    }
    w.flush().map_err(|e| CliError::io("result CSV", e))?;
    Ok(())
}

fn field<T: std::str::FromStr>(value: &str, column: &str, line: usize) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("line {line}: bad {column} value {value:?}")))
}

fn opt_time(value: &str, line: usize) -> Result<Option<f64>, CliError> {
    if value.is_empty() {
        Ok(None)
    } else {
        field(value, "wall_time_s", line).map(Some)
    }
}

/// Parses a result CSV. An empty input yields no rows.
pub fn read_rows<R: Read>(input: R) -> Result<Vec<ResultRow>, CliError> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(input);
    let mut records = r.records();
    let Some(header) = records.next() else {
        return Ok(Vec::new());
    };
    let header = header?;
    if header.iter().ne(COLUMNS) {
        let unknown: Vec<&str> = header.iter().filter(|c| !COLUMNS.contains(c)).collect();
        return Err(CliError::Config(format!(
            "unexpected CSV header {:?}{}",
            header.iter().collect::<Vec<_>>(),
            if unknown.is_empty() {
                String::new()
            } else {
                format!("; unknown columns {unknown:?}")
            }
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in records.enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() != COLUMNS.len() {
            return Err(CliError::Config(format!(
                "line {line}: expected {} fields",
                COLUMNS.len()
            )));
        }
        let placement_id = rec[0].to_string();
        let row = if &rec[1] == SUMMARY_TRIAL {
            let rate = rec[3].strip_prefix(RATE_PREFIX).ok_or_else(|| {
                CliError::Config(format!("line {line}: summary row without success rate"))
            })?;
            ResultRow::Summary(SummaryRow {
                placement_id,
                master_seed: field(&rec[2], "seed", line)?,
                success_rate: field(rate, "success_rate", line)?,
                mean_iterations: field(&rec[4], "iterations", line)?,
                detections: field(&rec[5], "detections", line)?,
                recoveries: field(&rec[6], "recoveries", line)?,
                unrecoverables: field(&rec[7], "unrecoverables", line)?,
                mean_wall_time_s: opt_time(&rec[8], line)?,
            })
        } else {
            ResultRow::Trial(TrialRow {
                placement_id,
                trial: field(&rec[1], "trial", line)?,
                seed: field(&rec[2], "seed", line)?,
                classification: Classification::from_label(&rec[3]).ok_or_else(|| {
                    CliError::Config(format!("line {line}: unknown classification {:?}", &rec[3]))
                })?,
                iterations: field(&rec[4], "iterations", line)?,
                detections: field(&rec[5], "detections", line)?,
                recoveries: field(&rec[6], "recoveries", line)?,
                unrecoverables: field(&rec[7], "unrecoverables", line)?,
                wall_time_s: opt_time(&rec[8], line)?,
            })
        };
        rows.push(row);
    }
    Ok(rows)
}
