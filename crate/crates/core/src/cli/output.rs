//! Round logs and summary tables on disk.
//!
//! Reals are written with Rust's shortest round-trip formatting, so reading
//! a file back yields bit-identical values.

use std::fs::File;
use std::path::Path;

use super::CliError;
use crate::eval::{compare_runs, RunCurve, SummaryTable};
use crate::federation::RoundRecord;

pub const ROUNDS_HEADER: [&str; 13] = [
    "strategy",
    "seed",
    "round",
    "vehicle_count",
    "mean_local_loss",
    "top1",
    "aggregate_weights",
    "lr",
    "vehicle_ids",
    "velocities",
    "blurs",
    "local_losses",
    "skipped",
];

pub const SUMMARY_HEADER: [&str; 6] = ["strategy", "seed", "round", "loss", "top1", "curve_std"];

fn join<T: ToString>(values: &[T]) -> String {
    values
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(";")
}

fn split<T: std::str::FromStr>(field: &str) -> Result<Vec<T>, String> {
    if field.is_empty() {
        return Ok(Vec::new());
    }
    field
        .split(';')
        .map(|s| s.parse().map_err(|_| format!("bad list element {s:?}")))
        .collect()
}

fn record_row(r: &RoundRecord) -> Vec<String> {
    vec![
        r.strategy.to_string(),
        r.seed.to_string(),
        r.round.to_string(),
        r.vehicle_count().to_string(),
        r.mean_local_loss.to_string(),
        r.top1.map(|t| t.to_string()).unwrap_or_default(),
        join(&r.weights),
        r.lr.to_string(),
        join(&r.vehicle_ids),
        join(&r.velocities),
        join(&r.blurs),
        join(&r.local_losses),
        r.skipped.to_string(),
    ]
}

fn parse_row(row: &csv::StringRecord) -> Result<RoundRecord, String> {
    if row.len() != ROUNDS_HEADER.len() {
        return Err(format!(
            "expected {} fields, got {}",
            ROUNDS_HEADER.len(),
            row.len()
        ));
    }
    fn num<T: std::str::FromStr>(s: &str, name: &str) -> Result<T, String> {
        s.parse().map_err(|_| format!("bad {name} {s:?}"))
    }
    let vehicle_ids: Vec<usize> = split(&row[8])?;
    let count: usize = num(&row[3], "vehicle_count")?;
    if count != vehicle_ids.len() {
        return Err(format!(
            "vehicle_count {count} but {} ids",
            vehicle_ids.len()
        ));
    }
    Ok(RoundRecord {
        strategy: row[0].parse()?,
        seed: num(&row[1], "seed")?,
        round: num(&row[2], "round")?,
        mean_local_loss: num(&row[4], "mean_local_loss")?,
        top1: if row[5].is_empty() {
            None
        } else {
            Some(num(&row[5], "top1")?)
        },
        weights: split(&row[6])?,
        lr: num(&row[7], "lr")?,
        vehicle_ids,
        velocities: split(&row[9])?,
        blurs: split(&row[10])?,
        local_losses: split(&row[11])?,
        skipped: num(&row[12], "skipped")?,
    })
}

fn csv_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Appends round records to a CSV file, flushing after each one.
pub struct RoundsWriter {
    inner: csv::Writer<File>,
    path: std::path::PathBuf,
}

impl RoundsWriter {
    pub fn create(path: &Path) -> Result<Self, CliError> {
        let mut inner = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        inner
            .write_record(ROUNDS_HEADER)
            .map_err(|e| csv_err(path, e))?;
        inner.flush().map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self {
            inner,
            path: path.to_path_buf(),
        })
    }

    pub fn write(&mut self, r: &RoundRecord) -> std::io::Result<()> {
        self.inner
            .write_record(record_row(r))
            .map_err(std::io::Error::other)?;
        self.inner.flush()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

pub fn read_rounds_csv(path: &Path) -> Result<Vec<RoundRecord>, CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = reader.headers().map_err(|e| csv_err(path, e))?;
    if header.iter().ne(ROUNDS_HEADER) {
        return Err(csv_err(path, "unexpected header"));
    }
    reader
        .records()
        .enumerate()
        .map(|(i, row)| {
            let row = row.map_err(|e| csv_err(path, e))?;
            parse_row(&row).map_err(|m| csv_err(path, format!("row {}: {m}", i + 1)))
        })
        .collect()
}

pub fn write_rounds_json(path: &Path, records: &[RoundRecord]) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(records).map_err(|e| csv_err(path, e))?;
    std::fs::write(path, text + "\n").map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_rounds_json(path: &Path) -> Result<Vec<RoundRecord>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| csv_err(path, e))
}

/// One curve per (strategy, seed), in order of first appearance.
pub fn curves(records: &[RoundRecord]) -> Vec<RunCurve> {
    let mut out: Vec<RunCurve> = Vec::new();
    for r in records {
        let name = r.strategy.to_string();
        let idx = match out
            .iter()
            .position(|c| c.strategy == name && c.seed == r.seed)
        {
            Some(i) => i,
            None => {
                out.push(RunCurve {
                    strategy: name,
                    seed: r.seed,
                    losses: Vec::new(),
                    top1: Vec::new(),
                });
                out.len() - 1
            }
        };
        out[idx].losses.push(r.mean_local_loss);
        out[idx].top1.push(r.top1);
    }
    out
}

pub fn summarize_records(records: &[RoundRecord]) -> Result<SummaryTable, CliError> {
    Ok(compare_runs(&curves(records))?)
}

pub fn write_summary_csv(path: &Path, table: &SummaryTable) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(SUMMARY_HEADER)
        .map_err(|e| csv_err(path, e))?;
    for row in &table.rows {
        w.write_record([
            row.strategy.clone(),
            row.seed
                .map_or_else(|| "mean".to_string(), |s| s.to_string()),
            row.rounds.to_string(),
            row.final_loss.to_string(),
            row.final_top1.to_string(),
            row.curve_std.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}
