//! The 3×3 affine convergence grid: parameterization × composition, each
//! cell trained over several seeds.

use std::path::Path;

use anyhow::{Context, Result};
use icreg_core::data::Dataset;
use icreg_core::losses::MetricsReport;
use icreg_core::nets::{affine_grid_descriptor, param_label, Composition, Parameterization, GRID_PARAMS};
use icreg_core::train::{train, DataSource, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::jobs::run_jobs;
use crate::pnm;
use crate::raster::{line_plot, violin_plot};

pub const LOSS_CURVES_FILE: &str = "loss_curves.csv";
pub const RUNS_FILE: &str = "runs.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

/// Grid experiment settings. Every run shares `base`; its model and seed
/// are replaced per cell and seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentGridSpec {
    pub seeds: Vec<u64>,
    pub base: TrainConfig,
}

impl ExperimentGridSpec {
    pub fn new(data: DataSource, iterations: usize, seeds: Vec<u64>) -> Self {
        let model = affine_grid_descriptor(Parameterization::Antisym, Composition::OneStep, 0);
        let mut base = TrainConfig::new(model, data, iterations, 0);
        base.log_every = 1;
        Self { seeds, base }
    }

    /// All nine `(parameterization, composition)` cells, row-major by
    /// parameterization.
    pub fn cells() -> Vec<(Parameterization, Composition)> {
        GRID_PARAMS.iter().flat_map(|&p| Composition::ALL.iter().map(move |&c| (p, c))).collect()
    }

    pub fn config(&self, param: Parameterization, comp: Composition, seed: u64) -> TrainConfig {
        let mut cfg = self.base.clone();
        cfg.model = affine_grid_descriptor(param, comp, seed);
        cfg.seed = seed;
        cfg
    }
}

pub fn cell_id(param: Parameterization, comp: Composition) -> String {
    format!("{}_{}", comp.label(), param_label(param))
}

#[derive(Clone, Debug)]
pub struct GridRun {
    pub cell: String,
    pub param: Parameterization,
    pub composition: Composition,
    pub seed: u64,
    /// Logged rows, or the error that stopped the run.
    pub result: std::result::Result<Vec<MetricsReport>, String>,
}

impl GridRun {
    pub fn similarity_at(&self, step: usize) -> Option<f64> {
        self.result.as_ref().ok()?.iter().find(|r| r.step == step).map(|r| r.similarity)
    }

    pub fn final_similarity(&self) -> Option<f64> {
        self.result.as_ref().ok()?.last().map(|r| r.similarity)
    }

    pub fn max_inv_consistency(&self) -> Option<f64> {
        let rows = self.result.as_ref().ok()?;
        Some(rows.iter().map(|r| r.inv_consistency_err).fold(0.0, f64::max))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellSummary {
    pub cell: String,
    pub parameterization: String,
    pub composition: String,
    pub consistent_by_construction: bool,
    pub runs: usize,
    pub failures: usize,
    pub median_final: Option<f64>,
    pub iqr_final: Option<f64>,
    /// Median similarity at a quarter of the iteration budget.
    pub median_at_quarter: Option<f64>,
    pub max_inv_consistency_err: Option<f64>,
}

pub const SUMMARY_HEADER: [&str; 10] = [
    "cell",
    "parameterization",
    "composition",
    "consistent_by_construction",
    "runs",
    "failures",
    "median_final",
    "iqr_final",
    "median_at_quarter",
    "max_inv_consistency_err",
];

#[derive(Clone, Debug)]
pub struct GridReport {
    pub runs: Vec<GridRun>,
    pub summary: Vec<CellSummary>,
}

impl GridReport {
    pub fn cell_runs(&self, param: Parameterization, comp: Composition) -> impl Iterator<Item = &GridRun> {
        self.runs.iter().filter(move |r| r.param == param && r.composition == comp)
    }
}

/// Linear-interpolated quantile of a sorted slice.
pub fn quantile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

pub fn median(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut v: Vec<f64> = values.into_iter().collect();
    v.sort_by(f64::total_cmp);
    quantile(&v, 0.5)
}

fn summarize(spec: &ExperimentGridSpec, runs: &[GridRun]) -> Result<Vec<CellSummary>> {
    let quarter = spec.base.iterations / 4;
    ExperimentGridSpec::cells()
        .into_iter()
        .map(|(p, c)| {
            let cell: Vec<&GridRun> = runs.iter().filter(|r| r.param == p && r.composition == c).collect();
            let mut finals: Vec<f64> = cell.iter().filter_map(|r| r.final_similarity()).collect();
            finals.sort_by(f64::total_cmp);
            let iqr = quantile(&finals, 0.75).zip(quantile(&finals, 0.25)).map(|(a, b)| a - b);
            let consistent = icreg_core::nets::RegistrationModel::new(affine_grid_descriptor(p, c, 0))?.is_consistent_by_construction();
            Ok(CellSummary {
                cell: cell_id(p, c),
                parameterization: param_label(p).into(),
                composition: c.label().into(),
                consistent_by_construction: consistent,
                runs: cell.len(),
                failures: cell.iter().filter(|r| r.result.is_err()).count(),
                median_final: quantile(&finals, 0.5),
                iqr_final: iqr,
                median_at_quarter: median(cell.iter().filter_map(|r| r.similarity_at(quarter))),
                max_inv_consistency_err: cell.iter().filter_map(|r| r.max_inv_consistency()).reduce(f64::max),
            })
        })
        .collect()
}

/// Runs every cell and seed as an independent job. Failed runs are kept
/// with their error rather than dropped.
pub fn run_affine_grid(spec: &ExperimentGridSpec, data: &Dataset, workers: usize, out: Option<&Path>) -> Result<GridReport> {
    spec.base.validate()?;
    let jobs: Vec<(Parameterization, Composition, u64)> = ExperimentGridSpec::cells()
        .into_iter()
        .flat_map(|(p, c)| spec.seeds.iter().map(move |&s| (p, c, s)))
        .collect();
    let runs = run_jobs(workers, &jobs, |&(p, c, seed)| {
        let cfg = spec.config(p, c, seed);
        let result = train(&cfg, data, None).map(|o| o.metrics).map_err(|e| e.to_string());
        if let Err(e) = &result {
            log::warn!("grid cell {} seed {seed} failed: {e}", cell_id(p, c));
        }
        GridRun {
            cell: cell_id(p, c),
            param: p,
            composition: c,
            seed,
            result,
        }
    })?;
    let summary = summarize(spec, &runs)?;
    let report = GridReport { runs, summary };
    if let Some(out) = out {
        write_outputs(out, spec, &report)?;
    }
    Ok(report)
}

#[derive(Serialize)]
struct CurveRow<'a> {
    cell: &'a str,
    seed: u64,
    step: usize,
    similarity: f64,
    inv_consistency_err: f64,
}

#[derive(Serialize)]
struct RunRow<'a> {
    cell: &'a str,
    seed: u64,
    status: &'a str,
    error: &'a str,
    final_similarity: Option<f64>,
    max_inv_consistency_err: Option<f64>,
}

fn write_outputs(out: &Path, spec: &ExperimentGridSpec, report: &GridReport) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let spec_path = out.join("grid_spec.json");
    std::fs::write(&spec_path, serde_json::to_string_pretty(spec)?).with_context(|| format!("writing {}", spec_path.display()))?;

    let mut curves = csv::Writer::from_path(out.join(LOSS_CURVES_FILE))?;
    let mut runs = csv::Writer::from_path(out.join(RUNS_FILE))?;
    for r in &report.runs {
        if let Ok(rows) = &r.result {
            for row in rows {
                curves.serialize(CurveRow {
                    cell: &r.cell,
                    seed: r.seed,
                    step: row.step,
                    similarity: row.similarity,
                    inv_consistency_err: row.inv_consistency_err,
                })?;
            }
        }
        runs.serialize(RunRow {
            cell: &r.cell,
            seed: r.seed,
            status: if r.result.is_ok() { "ok" } else { "failed" },
            error: r.result.as_ref().err().map_or("", String::as_str),
            final_similarity: r.final_similarity(),
            max_inv_consistency_err: r.max_inv_consistency(),
        })?;
    }
    curves.flush()?;
    runs.flush()?;

    let mut summary = csv::Writer::from_path(out.join(SUMMARY_FILE))?;
    for s in &report.summary {
        summary.serialize(s)?;
    }
    summary.flush()?;

    let cells = ExperimentGridSpec::cells();
    let mut series = Vec::new();
    let mut finals = Vec::new();
    for &(p, c) in &cells {
        let runs: Vec<&Vec<MetricsReport>> = report.cell_runs(p, c).filter_map(|r| r.result.as_ref().ok()).collect();
        let steps = runs.iter().map(|r| r.len()).min().unwrap_or(0);
        series.push((0..steps).filter_map(|k| Some((runs[0][k].step as f64, median(runs.iter().map(|r| r[k].similarity))?))).collect());
        finals.push(report.cell_runs(p, c).filter_map(GridRun::final_similarity).collect());
    }
    pnm::write_ppm(&out.join("loss_curves.ppm"), &line_plot(&series, 640, 400))?;
    pnm::write_ppm(&out.join("final_losses.ppm"), &violin_plot(&finals, 640, 400))?;
    Ok(())
}
