//! Metrics CSV with header `model,depth,epoch,split,loss,accuracy`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::train::MetricsRow;

pub const METRICS_HEADER: [&str; 6] = ["model", "depth", "epoch", "split", "loss", "accuracy"];

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Schema {
            line,
            message: format!("{other:?}"),
        },
    }
}

pub fn write_metrics_csv(rows: &[MetricsRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    if rows.is_empty() {
        w.write_record(METRICS_HEADER)
            .map_err(|e| csv_error(path, e))?;
    }
    for row in rows {
        w.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = r.headers().map_err(|e| csv_error(path, e))?;
    if header.iter().ne(METRICS_HEADER) {
        return Err(Error::Schema {
            line: 1,
            message: format!("unexpected header {header:?}"),
        });
    }
    let mut rows = Vec::new();
    for row in r.deserialize() {
        let row: MetricsRow = row.map_err(|e| csv_error(path, e))?;
        if !(0.0..=1.0).contains(&row.accuracy) {
            return Err(Error::Schema {
                line: rows.len() + 2,
                message: format!("accuracy {} outside [0, 1]", row.accuracy),
            });
        }
        rows.push(row);
    }
    Ok(rows)
}
