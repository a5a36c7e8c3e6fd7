//! Trains the six zoo models on one dataset and renders comparison panels.

use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use icreg_core::autodiff::{ParamStore, Tape, Tensor};
use icreg_core::data::{Dataset, PairSampler};
use icreg_core::lie::{compose, warp_image};
use icreg_core::losses::MetricsReport;
use icreg_core::nets::{zoo_descriptor, RegistrationModel, ZOO_MODELS};
use icreg_core::train::{evaluate_pair, train, DataSource, Objective, PairEvaluation, TrainConfig};
use serde::Serialize;

use crate::jobs::run_jobs;
use crate::pnm;
use crate::raster::{Canvas, GRID, WHITE};

pub const ZOO_RESULTS_FILE: &str = "zoo_results.csv";

#[derive(Clone, Debug)]
pub struct ZooOptions {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub objective: Objective,
    /// Images at the end of the dataset kept for evaluation.
    pub held_out: usize,
    pub eval_pairs: usize,
    /// Evaluation pairs rendered as panels.
    pub panel_pairs: usize,
    pub log_every: usize,
    pub seed: u64,
}

impl Default for ZooOptions {
    fn default() -> Self {
        Self {
            iterations: 500,
            batch_size: 2,
            lr: 1e-4,
            objective: Objective::default(),
            held_out: 20,
            eval_pairs: 10,
            panel_pairs: 3,
            log_every: 25,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ZooModel {
    pub model: RegistrationModel,
    pub params: ParamStore,
    pub metrics: Vec<MetricsReport>,
    /// One entry per evaluation pair.
    pub evals: Vec<PairEvaluation>,
    pub train_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct ZooReport {
    pub models: Vec<ZooModel>,
    pub pairs: Vec<(usize, usize)>,
}

#[derive(Serialize)]
struct ResultRow<'a> {
    model: &'a str,
    pair: usize,
    moving: usize,
    fixed: usize,
    mse_before: f64,
    mse_after: f64,
    similarity: f64,
    inv_consistency_err: f64,
    pct_neg_jacobian: f64,
    dice: Option<f64>,
    mtre: Option<f64>,
}

pub const ZOO_RESULTS_HEADER: [&str; 11] = [
    "model",
    "pair",
    "moving",
    "fixed",
    "mse_before",
    "mse_after",
    "similarity",
    "inv_consistency_err",
    "pct_neg_jacobian",
    "dice",
    "mtre",
];

/// Evaluation pairs drawn from the held-out tail of `data`.
pub fn held_out_pairs(data: &Dataset, held_out: usize, count: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    let (_, test) = data.split(held_out);
    Ok(PairSampler::new(test, seed ^ 0x5eed)?.take(count).collect())
}

pub fn run_zoo(source: &DataSource, data: &Dataset, opts: &ZooOptions, workers: usize, out: Option<&Path>) -> Result<ZooReport> {
    let pairs = held_out_pairs(data, opts.held_out, opts.eval_pairs, opts.seed)?;
    let results = run_jobs(workers, &ZOO_MODELS, |name| -> Result<ZooModel> {
        let mut cfg = TrainConfig::new(zoo_descriptor(name, opts.seed)?, source.clone(), opts.iterations, opts.seed);
        cfg.held_out = opts.held_out;
        cfg.batch_size = opts.batch_size;
        cfg.lr = opts.lr;
        cfg.lambda = opts.objective.lambda;
        cfg.sigma = opts.objective.sigma;
        cfg.log_every = opts.log_every;
        let start = Instant::now();
        let dir = out.map(|o| o.join(name));
        let outcome = train(&cfg, data, dir.as_deref()).with_context(|| format!("training zoo model {name}"))?;
        let train_seconds = start.elapsed().as_secs_f64();
        let model = RegistrationModel::new(cfg.model.clone())?;
        let evals = pairs
            .iter()
            .map(|&(i, j)| evaluate_pair(&model, &outcome.params, &data.images[i], &data.images[j], opts.objective))
            .collect::<icreg_core::Result<Vec<_>>>()?;
        log::info!("zoo {name}: trained in {train_seconds:.1}s");
        Ok(ZooModel {
            model,
            params: outcome.params,
            metrics: outcome.metrics,
            evals,
            train_seconds,
        })
    })?
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let report = ZooReport { models: results, pairs };
    if let Some(out) = out {
        write_results(&out.join(ZOO_RESULTS_FILE), &report)?;
        for k in 0..opts.panel_pairs.min(report.pairs.len()) {
            let (i, j) = report.pairs[k];
            let panel = render_panel(&report, &data.images[i].pixels, &data.images[j].pixels)?;
            pnm::write_ppm(&out.join(format!("panel_{k}.ppm")), &panel)?;
        }
    }
    Ok(report)
}

fn write_results(path: &Path, report: &ZooReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for (k, &(i, j)) in report.pairs.iter().enumerate() {
        for m in &report.models {
            let e = &m.evals[k];
            w.serialize(ResultRow {
                model: m.model.name(),
                pair: k,
                moving: i,
                fixed: j,
                mse_before: e.mse_before,
                mse_after: e.mse_after,
                similarity: e.similarity,
                inv_consistency_err: e.inv_consistency_err,
                pct_neg_jacobian: e.pct_neg_jacobian,
                dice: e.dice,
                mtre: e.mtre,
            })?;
        }
    }
    w.flush().with_context(|| format!("writing {}", path.display()))
}

const ZOOM: i64 = 4;
const GAP: i64 = 4;
const GRID_STEP: usize = 4;

/// One row per model: moving image, `|A∘T − B|`, the warped image under
/// its deformed grid, and the grid of `T_AB ∘ T_BA`. The top row shows the
/// fixed image.
pub fn render_panel(report: &ZooReport, moving: &Tensor, fixed: &Tensor) -> Result<image::RgbImage> {
    let (h, w) = (moving.shape()[0] as i64, moving.shape()[1] as i64);
    let (cw, ch) = (w * ZOOM + GAP, h * ZOOM + GAP);
    let rows = report.models.len() as i64 + 1;
    let mut c = Canvas::new((4 * cw + GAP) as u32, (rows * ch + GAP) as u32, WHITE);
    c.blit_gray(fixed, GAP, GAP, ZOOM);
    for (r, m) in report.models.iter().enumerate() {
        let y = GAP + (r as i64 + 1) * ch;
        let tape = Tape::new();
        let p = m.params.bind(&tape);
        let (a, b) = (tape.constant(moving.clone()), tape.constant(fixed.clone()));
        let t_ab = m.model.forward(&p, &a, &b)?.transform;
        let t_ba = m.model.forward(&p, &b, &a)?.transform;
        let warped = warp_image(&a, &t_ab)?;
        let diff = warped.value().data().iter().zip(fixed.data()).map(|(x, y)| (x - y).abs()).collect();
        let field = t_ab.position_field(&tape, h as usize, w as usize)?;
        let round = compose(&t_ab, &t_ba)?.position_field(&tape, h as usize, w as usize)?;

        c.blit_gray(moving, GAP, y, ZOOM);
        c.blit_gray(&Tensor::new(moving.shape(), diff)?, GAP + cw, y, ZOOM);
        c.blit_gray(warped.value(), GAP + 2 * cw, y, ZOOM);
        c.deformed_grid(field.value(), GAP + 2 * cw, y, ZOOM, GRID_STEP, GRID);
        c.deformed_grid(round.value(), GAP + 3 * cw, y, ZOOM, GRID_STEP, GRID);
    }
    Ok(c.img)
}
