use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exchange::{ExchangeTrace, IterationRecord};
use crate::ppo::SubproblemReport;

pub const METRICS_HEADER: [&str; 8] = [
    "seed",
    "outer_iteration",
    "inner_round",
    "objective_estimate",
    "max_violation",
    "working_set_size",
    "multipliers_l1",
    "wall_clock_s",
];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRow {
    pub seed: u64,
    pub outer_iteration: usize,
    /// `-1` marks the outer-iteration summary row.
    pub inner_round: i64,
    pub objective_estimate: f64,
    pub max_violation: f64,
    pub working_set_size: usize,
    pub multipliers_l1: f64,
    pub wall_clock_s: f64,
}

fn inner_rows(seed: u64, outer: usize, report: &SubproblemReport, ws_size: usize, rows: &mut Vec<MetricsRow>) {
    for r in &report.rounds {
        rows.push(MetricsRow {
            seed,
            outer_iteration: outer,
            inner_round: r.round as i64,
            objective_estimate: r.objective,
            max_violation: r.max_violation,
            working_set_size: ws_size,
            multipliers_l1: r.multipliers_l1,
            wall_clock_s: 0.0,
        });
    }
}

/// Rows of a trace. Outer iteration `k` lists the inner rounds of the solve
/// that produced iterate `k`, then the summary of iterate `k`'s search.
pub fn metrics_rows(seed: u64, trace: &ExchangeTrace<SubproblemReport>, wall_clock: bool) -> Vec<MetricsRow> {
    let mut rows = Vec::new();
    if let Some(init) = &trace.initial {
        inner_rows(seed, 0, &init.report, init.working_set.len() + init.deleted.len(), &mut rows);
    }
    for (k, rec) in trace.records.iter().enumerate() {
        if k > 0 {
            if let Some(solve) = &trace.records[k - 1].solve {
                inner_rows(seed, k, &solve.report, solve.working_set.len() + solve.deleted.len(), &mut rows);
            }
        }
        rows.push(summary_row(seed, rec, wall_clock));
    }
    rows
}

fn summary_row(seed: u64, rec: &IterationRecord<SubproblemReport>, wall_clock: bool) -> MetricsRow {
    MetricsRow {
        seed,
        outer_iteration: rec.iteration,
        inner_round: -1,
        objective_estimate: rec.objective,
        max_violation: rec.max_violation(),
        working_set_size: rec.working_set.len(),
        multipliers_l1: rec.working_set.iter().map(|e| e.multiplier).sum(),
        wall_clock_s: if wall_clock { rec.wall_clock_s } else { 0.0 },
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    if rows.is_empty() {
        w.write_record(METRICS_HEADER).map_err(csv_err)?;
    }
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// `iteration,event,family,y1,...,multiplier` lines for every add and delete.
pub fn write_working_set_log(path: &Path, trace: &ExchangeTrace<SubproblemReport>, index_dim: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["iteration".to_string(), "event".into(), "family".into()];
    header.extend((1..=index_dim).map(|i| format!("y{i}")));
    header.push("multiplier".into());
    w.write_record(&header).map_err(csv_err)?;
    let mut emit = |iteration: usize, event: &str, family: usize, coords: &[f64], v: f64| {
        let mut rec = vec![iteration.to_string(), event.to_string(), family.to_string()];
        rec.extend(coords.iter().map(|c| c.to_string()));
        rec.push(v.to_string());
        w.write_record(&rec).map_err(csv_err)
    };
    if let Some(init) = &trace.initial {
        for e in &init.deleted {
            emit(0, "delete", e.point.family, &e.point.coords, e.multiplier)?;
        }
    }
    for rec in &trace.records {
        if let (Some(y), Some(v)) = (&rec.added, rec.added_multiplier) {
            emit(rec.iteration + 1, "add", y.family, &y.coords, v)?;
        }
        if let Some(solve) = &rec.solve {
            for e in &solve.deleted {
                emit(rec.iteration + 1, "delete", e.point.family, &e.point.coords, e.multiplier)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_heatmap(path: &Path, rows: &[(Vec<f64>, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["y1", "y2", "violation_plus"]).map_err(csv_err)?;
    for (y, v) in rows {
        w.write_record([y[0].to_string(), y[1].to_string(), v.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trajectory(path: &Path, states: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["t", "x", "y"]).map_err(csv_err)?;
    for (t, s) in states.iter().enumerate() {
        w.write_record([t.to_string(), s[0].to_string(), s[1].to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FileEntry {
    pub path: PathBuf,
    pub sha256: String,
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Lists `paths` relative to `root` with their content hashes.
pub fn file_entries(root: &Path, paths: &[PathBuf]) -> Result<Vec<FileEntry>> {
    paths
        .iter()
        .map(|p| {
            Ok(FileEntry {
                path: p.strip_prefix(root).unwrap_or(p).to_path_buf(),
                sha256: hash_file(p)?,
            })
        })
        .collect()
}
