use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::TrainConfig;
use super::evaluate::evaluate_pair;
use super::objective::{pair_gradient, pair_loss, LossValues};
use super::optim::adam_step;
use crate::autodiff::{ParamStore, Tensor};
use crate::data::{Dataset, PairSampler};
use crate::error::{Error, Result};
use crate::losses::{write_metrics_csv, MetricsReport};
use crate::nets::RegistrationModel;

pub const METRICS_FILE: &str = "metrics.csv";
pub const MODEL_FILE: &str = "model.json";
pub const FINAL_CHECKPOINT: &str = "ckpt_final.icckpt";

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ParamStore,
    /// One row per logged iteration, plus a final row at `step = iterations`
    /// measured after the last update.
    pub metrics: Vec<MetricsReport>,
}

fn mean_values(vals: &[LossValues]) -> LossValues {
    let n = vals.len() as f64;
    LossValues {
        total: vals.iter().map(|v| v.total).sum::<f64>() / n,
        similarity: vals.iter().map(|v| v.similarity).sum::<f64>() / n,
        regularizer: vals.iter().map(|v| v.regularizer).sum::<f64>() / n,
    }
}

fn mean_grads(per_pair: Vec<BTreeMap<String, Tensor>>) -> Result<BTreeMap<String, Tensor>> {
    let n = per_pair.len() as f64;
    let mut sum: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut shapes = BTreeMap::new();
    for grads in per_pair {
        for (name, g) in grads {
            let acc = sum.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for (a, v) in acc.iter_mut().zip(g.data()) {
                *a += v;
            }
            shapes.insert(name, g.shape().to_vec());
        }
    }
    sum.into_iter()
        .map(|(name, acc)| {
            let t = Tensor::new(&shapes[&name], acc.into_iter().map(|v| v / n).collect())?;
            Ok((name, t))
        })
        .collect()
}

struct Writer<'a> {
    dir: Option<&'a Path>,
}

impl Writer<'_> {
    fn path(&self, name: &str) -> Option<PathBuf> {
        self.dir.map(|d| d.join(name))
    }

    fn checkpoint(&self, params: &ParamStore, name: &str) -> Result<()> {
        match self.path(name) {
            Some(p) => params.save(&p),
            None => Ok(()),
        }
    }

    fn metrics(&self, rows: &[MetricsReport]) -> Result<()> {
        match self.path(METRICS_FILE) {
            Some(p) => write_metrics_csv(&p, rows),
            None => Ok(()),
        }
    }
}

/// Trains `cfg.model` on `data` from fresh parameters.
///
/// Each iteration draws `batch_size` ordered pairs from the training split,
/// averages the per-pair gradients and takes one Adam step. Logged rows hold
/// the batch-mean losses before the update; the geometric metrics are
/// measured on the first pair of the batch. With `out`, the model
/// descriptor, config, checkpoints and `metrics.csv` are written there. A
/// non-finite loss aborts with its iteration index after flushing the rows
/// logged so far.
pub fn train(cfg: &TrainConfig, data: &Dataset, out: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model = RegistrationModel::new(cfg.model.clone())?;
    let (train_range, _) = data.split(cfg.held_out);
    let mut sampler = PairSampler::new(train_range, cfg.seed)?;
    let writer = Writer { dir: out };
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        cfg.model.save(&dir.join(MODEL_FILE))?;
        let cfg_path = dir.join("config.json");
        fs::write(&cfg_path, cfg.to_json()?).map_err(|e| Error::io(&cfg_path, e))?;
    }

    let run_id = format!("{}-s{}", cfg.model.name, cfg.seed);
    let obj = cfg.objective();
    let opt = cfg.adam();
    let mut params = model.init_params()?;
    let mut rows = Vec::new();

    for it in 0..cfg.iterations {
        let pairs: Vec<(usize, usize)> = (0..cfg.batch_size).map(|_| sampler.next_pair()).collect();
        let results = pairs
            .par_iter()
            .map(|&(i, j)| pair_gradient(&model, &params, &data.images[i].pixels, &data.images[j].pixels, obj))
            .collect::<Result<Vec<_>>>();
        let (values, grads): (Vec<_>, Vec<_>) = match results {
            Ok(r) => r.into_iter().unzip(),
            Err(Error::NonFinite(_)) => (vec![LossValues { total: f64::NAN, ..Default::default() }], Vec::new()),
            Err(e) => return Err(e),
        };
        let mean = mean_values(&values);
        if !mean.total.is_finite() {
            log::warn!("{run_id}: non-finite loss at iteration {it}");
            writer.metrics(&rows)?;
            return Err(Error::NonFiniteLoss(it));
        }
        if it % cfg.log_every == 0 {
            let (i, j) = pairs[0];
            let mut row = evaluate_pair(&model, &params, &data.images[i], &data.images[j], obj)?.report(&run_id, it);
            (row.similarity, row.regularizer, row.loss) = (mean.similarity, mean.regularizer, mean.total);
            log::debug!("{run_id} it {it}: loss {:.6} ice {:.3e}", row.loss, row.inv_consistency_err);
            rows.push(row);
        }
        adam_step(&mut params, &mean_grads(grads)?, &opt)?;
        if cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0 {
            writer.checkpoint(&params, &format!("ckpt_{:06}.icckpt", it + 1))?;
        }
    }

    let pairs: Vec<(usize, usize)> = (0..cfg.batch_size).map(|_| sampler.next_pair()).collect();
    let values = pairs
        .par_iter()
        .map(|&(i, j)| pair_loss(&model, &params, &data.images[i].pixels, &data.images[j].pixels, obj))
        .collect::<Result<Vec<_>>>()?;
    let mean = mean_values(&values);
    let (i, j) = pairs[0];
    let mut last = evaluate_pair(&model, &params, &data.images[i], &data.images[j], obj)?.report(&run_id, cfg.iterations);
    (last.similarity, last.regularizer, last.loss) = (mean.similarity, mean.regularizer, mean.total);
    rows.push(last);

    writer.metrics(&rows)?;
    writer.checkpoint(&params, FINAL_CHECKPOINT)?;
    Ok(TrainOutcome { params, metrics: rows })
}
