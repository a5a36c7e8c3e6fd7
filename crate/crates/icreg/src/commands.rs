//! Single-model commands: dataset generation, training, registration and
//! evaluation.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use icreg_core::autodiff::{ParamStore, Tape, Tensor};
use icreg_core::data::{Dataset, PairSampler};
use icreg_core::io::{ArrayFile, WARP_MAGIC};
use icreg_core::losses::{write_metrics_csv, MetricsReport};
use icreg_core::nets::{ModelDescriptor, RegistrationModel};
use icreg_core::train::{evaluate_pair, instance_optimize, train, Adam, DataSource, Objective, TrainConfig, TrainOutcome, MODEL_FILE};

use crate::pnm;

pub const WARP_FILE: &str = "warp.icwarp";
pub const WARPED_FILE: &str = "warped.pgm";
pub const EVALUATION_FILE: &str = "evaluation.csv";
const PREVIEWS: usize = 16;

/// Writes `data` to `out` with PGM previews of the first images.
pub fn gen_data(source: &DataSource, out: &Path) -> Result<Dataset> {
    let ds = source.load().context("generating dataset")?;
    ds.save(out).with_context(|| format!("saving dataset to {}", out.display()))?;
    let previews = out.join("previews");
    std::fs::create_dir_all(&previews).with_context(|| format!("creating {}", previews.display()))?;
    for (k, img) in ds.images.iter().take(PREVIEWS).enumerate() {
        pnm::save_image(&previews.join(format!("{k:03}.pgm")), &img.pixels)?;
    }
    Ok(ds)
}

pub fn train_command(config: &Path, seed: Option<u64>, out: &Path) -> Result<TrainOutcome> {
    let mut cfg = TrainConfig::load(config).with_context(|| format!("loading config {}", config.display()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let ds = cfg.data.load().context("loading training data")?;
    Ok(train(&cfg, &ds, Some(out))?)
}

/// Loads checkpoint weights together with the model descriptor, by default
/// the `model.json` next to the checkpoint.
pub fn load_model(checkpoint: &Path, descriptor: Option<&Path>) -> Result<(RegistrationModel, ParamStore)> {
    let desc_path: PathBuf = match descriptor {
        Some(p) => p.to_path_buf(),
        None => checkpoint.parent().unwrap_or(Path::new(".")).join(MODEL_FILE),
    };
    let desc = ModelDescriptor::load(&desc_path).with_context(|| format!("loading model descriptor {}", desc_path.display()))?;
    let model = RegistrationModel::new(desc)?;
    let params = ParamStore::load(checkpoint).with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let fresh = model.init_params()?;
    for (name, entry) in fresh.iter() {
        match params.get(name) {
            Some(p) if p.value.shape() == entry.value.shape() => {}
            Some(p) => bail!("{}: parameter `{name}` has shape {:?}, model expects {:?}", checkpoint.display(), p.value.shape(), entry.value.shape()),
            None => bail!("{}: parameter `{name}` missing", checkpoint.display()),
        }
    }
    Ok((model, params))
}

#[derive(Clone, Debug)]
pub struct Registration {
    /// Position field `[h,w,2]`: the fixed-image pixel centers mapped into
    /// the moving image.
    pub field: Tensor,
    pub warped: Tensor,
    pub loss_before: Option<f64>,
    pub loss_after: Option<f64>,
}

/// Samples `moving` at a position field `[h,w,2]`.
pub fn apply_warp(moving: &Tensor, field: &Tensor) -> Result<Tensor> {
    let tape = Tape::new();
    Ok(tape.constant(moving.clone()).grid_sample(&tape.constant(field.clone()))?.value().clone())
}

pub fn register(model: &RegistrationModel, params: &ParamStore, moving: &Tensor, fixed: &Tensor, instance_steps: usize, obj: Objective, opt: &Adam) -> Result<Registration> {
    if moving.shape() != fixed.shape() {
        bail!("moving image {:?} and fixed image {:?} differ in size", moving.shape(), fixed.shape());
    }
    let (tuned, before, after) = if instance_steps > 0 {
        let r = instance_optimize(model, params, moving, fixed, obj, opt, instance_steps)?;
        (r.params, Some(r.loss_before), Some(r.loss_after))
    } else {
        (params.clone(), None, None)
    };
    let tape = Tape::new();
    let p = tuned.bind(&tape);
    let (a, b) = (tape.constant(moving.clone()), tape.constant(fixed.clone()));
    let t = model.forward(&p, &a, &b)?.transform;
    let (h, w) = (moving.shape()[0], moving.shape()[1]);
    let field = t.position_field(&tape, h, w)?.value().clone();
    let warped = apply_warp(moving, &field)?;
    Ok(Registration {
        field,
        warped,
        loss_before: before,
        loss_after: after,
    })
}

pub fn write_warp(path: &Path, field: &Tensor) -> Result<()> {
    let s = field.shape();
    let file = ArrayFile {
        extents: s[..s.len() - 1].to_vec(),
        data: field.to_vec(),
    };
    Ok(file.write(path, WARP_MAGIC)?)
}

pub fn read_warp(path: &Path) -> Result<Tensor> {
    let file = ArrayFile::read(path, WARP_MAGIC)?;
    let mut shape = file.extents.clone();
    shape.push(file.values_per_point());
    if shape.len() != 3 || shape[2] != 2 {
        bail!("{}: expected a 2D position field, got extents {:?}", path.display(), shape);
    }
    Ok(Tensor::new(&shape, file.data)?)
}

/// Writes `warp.icwarp` and `warped.pgm` into `out`.
pub fn save_registration(out: &Path, reg: &Registration) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_warp(&out.join(WARP_FILE), &reg.field)?;
    pnm::save_image(&out.join(WARPED_FILE), &reg.warped)
}

/// Metrics of `model` on the given ordered pairs, one row each, plus a
/// closing row with `run_id = "mean"` averaging every column.
pub fn evaluate_pairs(model: &RegistrationModel, params: &ParamStore, data: &Dataset, pairs: &[(usize, usize)], obj: Objective) -> Result<Vec<MetricsReport>> {
    let mut rows = Vec::with_capacity(pairs.len() + 1);
    for (k, &(i, j)) in pairs.iter().enumerate() {
        let (a, b) = (data.images.get(i), data.images.get(j));
        let (Some(a), Some(b)) = (a, b) else {
            bail!("pair ({i}, {j}) is outside a dataset of {} images", data.len());
        };
        rows.push(evaluate_pair(model, params, a, b, obj)?.report(model.name(), k));
    }
    if rows.is_empty() {
        return Ok(rows);
    }
    let n = rows.len() as f64;
    let mean = |f: &dyn Fn(&MetricsReport) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let opt_mean = |f: &dyn Fn(&MetricsReport) -> Option<f64>| {
        let v: Vec<f64> = rows.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let summary = MetricsReport {
        run_id: "mean".into(),
        step: rows.len(),
        similarity: mean(&|r| r.similarity),
        regularizer: mean(&|r| r.regularizer),
        loss: mean(&|r| r.loss),
        pct_neg_jacobian: mean(&|r| r.pct_neg_jacobian),
        inv_consistency_err: mean(&|r| r.inv_consistency_err),
        dice: opt_mean(&|r| r.dice),
        mtre: opt_mean(&|r| r.mtre),
    };
    rows.push(summary);
    Ok(rows)
}

/// Evaluates on `count` random ordered pairs of the last `held_out` images
/// (all images when `held_out` is 0) and writes `evaluation.csv`.
pub fn evaluate_command(model: &RegistrationModel, params: &ParamStore, data: &Dataset, count: usize, held_out: usize, seed: u64, obj: Objective, out: &Path) -> Result<Vec<MetricsReport>> {
    let range = if held_out == 0 { 0..data.len() } else { data.split(held_out).1 };
    let pairs: Vec<_> = PairSampler::new(range, seed)?.take(count).collect();
    let rows = evaluate_pairs(model, params, data, &pairs, obj)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_metrics_csv(&out.join(EVALUATION_FILE), &rows)?;
    Ok(rows)
}
