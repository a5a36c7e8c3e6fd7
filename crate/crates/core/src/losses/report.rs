use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const METRICS_HEADER: [&str; 9] = [
    "run_id",
    "step",
    "similarity",
    "regularizer",
    "loss",
    "pct_neg_jacobian",
    "inv_consistency_err",
    "dice",
    "mtre",
];

/// One row of a metrics CSV. `similarity` is the logged similarity loss
/// (`−LNCC`), so lower is better.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub run_id: String,
    pub step: usize,
    pub similarity: f64,
    pub regularizer: f64,
    pub loss: f64,
    pub pct_neg_jacobian: f64,
    pub inv_consistency_err: f64,
    pub dice: Option<f64>,
    pub mtre: Option<f64>,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path.display().to_string(), 0, format!("{other:?}")),
    }
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    if rows.is_empty() {
        w.write_record(METRICS_HEADER).map_err(|e| csv_err(path, e))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsReport>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}
