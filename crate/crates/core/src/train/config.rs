use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::objective::Objective;
use super::optim::Adam;
use crate::data::{gen_blob_digits, gen_tri_circ, load_idx, Dataset};
use crate::error::{Error, Result};
use crate::nets::ModelDescriptor;

pub const CONFIG_VERSION: u32 = 1;

/// Where training images come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// A directory written by `Dataset::save`.
    Dir { path: PathBuf },
    TriCirc { count: usize, size: usize, seed: u64 },
    BlobDigits { count: usize, size: usize, seed: u64 },
    Idx {
        images: PathBuf,
        #[serde(default)]
        labels: Option<PathBuf>,
        #[serde(default)]
        digit: Option<u8>,
    },
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::Dir { path } => Dataset::load(path),
            DataSource::TriCirc { count, size, seed } => gen_tri_circ(*count, *size, *seed),
            DataSource::BlobDigits { count, size, seed } => gen_blob_digits(*count, *size, *seed),
            DataSource::Idx { images, labels, digit } => load_idx(images, labels.as_deref(), *digit),
        }
    }
}

fn default_lambda() -> f64 {
    5.0
}
fn default_sigma() -> f64 {
    5.0
}
fn default_lr() -> f64 {
    1e-4
}
fn default_batch() -> usize {
    8
}
fn default_log_every() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub version: u32,
    pub model: ModelDescriptor,
    pub data: DataSource,
    /// Images at the end of the dataset kept out of training.
    #[serde(default)]
    pub held_out: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// LNCC window scale in pixels.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub iterations: usize,
    /// Seed of the pair sampler.
    pub seed: u64,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    /// Write `ckpt_<iteration>.icckpt` every this many iterations; 0 writes
    /// only the final checkpoint.
    #[serde(default)]
    pub checkpoint_every: usize,
}

impl TrainConfig {
    pub fn new(model: ModelDescriptor, data: DataSource, iterations: usize, seed: u64) -> Self {
        Self {
            version: CONFIG_VERSION,
            model,
            data,
            held_out: 0,
            lambda: default_lambda(),
            sigma: default_sigma(),
            lr: default_lr(),
            batch_size: default_batch(),
            iterations,
            seed,
            log_every: default_log_every(),
            checkpoint_every: 0,
        }
    }

    pub fn objective(&self) -> Objective {
        Objective {
            lambda: self.lambda,
            sigma: self.sigma,
        }
    }

    pub fn adam(&self) -> Adam {
        Adam::new(self.lr)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::invalid("train_config", msg));
        if self.version != CONFIG_VERSION {
            return Err(Error::invalid("train_config", format!("unsupported config version {}", self.version)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and >= 0");
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be finite and > 0");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and >= 0");
        }
        if self.iterations == 0 {
            return bad("iterations must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.log_every == 0 {
            return bad("log_every must be >= 1");
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s).map_err(|e| match e {
            Error::Json(j) => Error::format(path.display().to_string(), 0, j.to_string()),
            other => other,
        })
    }
}
