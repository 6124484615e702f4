//! CSV and JSON serialisation of evaluation results.

use std::fs::File;
use std::path::Path;

use serde::Serialize;

use super::{ConfusionCounts, MetricReport, METRIC_NAMES};
use crate::error::{Error, Result};

/// Row id of the aggregate line in a metrics CSV.
pub const AGGREGATE_ID: &str = "aggregate";

/// Result for one evaluated image.
#[derive(Debug, Clone, Serialize)]
pub struct ImageMetrics {
    pub image_id: String,
    pub counts: ConfusionCounts,
    pub report: MetricReport,
}

/// Metrics CSV contents read back from disk.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsTable {
    pub rows: Vec<(String, [f64; 7])>,
    pub aggregate: Option<[f64; 7]>,
}

impl MetricsTable {
    /// Per-image values of one metric column.
    pub fn column(&self, metric: &str) -> Option<Vec<f64>> {
        let idx = METRIC_NAMES.iter().position(|n| *n == metric)?;
        Some(self.rows.iter().map(|(_, v)| v[idx]).collect())
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.position() {
        Some(pos) => Error::Parse {
            line: pos.line() as usize,
            message: format!("{}: {e}", path.display()),
        },
        None => match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Parse {
                line: 0,
                message: format!("{}: {other:?}", path.display()),
            },
        },
    }
}

/// Writes one row per image followed by the aggregate row.
pub fn write_metrics_csv(path: &Path, images: &[ImageMetrics], aggregate: &MetricReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["image_id"];
    header.extend(METRIC_NAMES);
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    let rows = images
        .iter()
        .map(|m| (m.image_id.as_str(), m.report.values()))
        .chain(std::iter::once((AGGREGATE_ID, aggregate.values())));
    for (id, vals) in rows {
        let mut rec = vec![id.to_string()];
        rec.extend(vals.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct JsonDoc<'a> {
    aggregation: &'static str,
    aggregate: &'a MetricReport,
    images: &'a [ImageMetrics],
}

/// Writes the aggregate and per-image results as pretty JSON.
pub fn write_metrics_json(path: &Path, images: &[ImageMetrics], aggregate: &MetricReport) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let doc = JsonDoc {
        aggregation: aggregate.aggregation.name(),
        aggregate,
        images,
    };
    serde_json::to_writer_pretty(f, &doc).map_err(|e| Error::io(path, e.into()))
}

/// Reads a metrics CSV written by [`write_metrics_csv`].
pub fn read_metrics_csv(path: &Path) -> Result<MetricsTable> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let mut cols = Vec::with_capacity(7);
    for name in METRIC_NAMES {
        let idx = header.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("{}: missing column `{name}`", path.display()),
        })?;
        cols.push(idx);
    }
    let id_col = header.iter().position(|h| h == "image_id").unwrap_or(0);
    let mut table = MetricsTable::default();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let mut vals = [0.0; 7];
        for (v, &c) in vals.iter_mut().zip(&cols) {
            let field = rec.get(c).unwrap_or("");
            *v = field.trim().parse().map_err(|_| Error::Parse {
                line,
                message: format!("{}: `{field}` is not a number", path.display()),
            })?;
        }
        let id = rec.get(id_col).unwrap_or("").to_string();
        if id == AGGREGATE_ID {
            table.aggregate = Some(vals);
        } else {
            table.rows.push((id, vals));
        }
    }
    if table.rows.is_empty() && table.aggregate.is_none() {
        return Err(Error::Parse {
            line: 2,
            message: format!("{}: no data rows", path.display()),
        });
    }
    Ok(table)
}
