use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Default for Adam {
    fn default() -> Self {
        Self::new(1e-4)
    }
}

/// One bias-corrected Adam update of every parameter in `store`.
/// Parameters without an entry in `grads` see a zero gradient. Nothing is
/// modified if any gradient is unknown or mis-shaped.
pub fn adam_step(store: &mut ParamStore, grads: &BTreeMap<String, Tensor>, opt: &Adam) -> Result<()> {
    for (name, g) in grads {
        let entry = store.get(name).ok_or_else(|| Error::MissingParam(name.clone()))?;
        if entry.value.shape() != g.shape() {
            return Err(Error::shape("adam_step", &[entry.value.shape(), g.shape()]));
        }
    }
    for (name, entry) in store.iter_mut() {
        let n = entry.value.len();
        let zeros;
        let g = match grads.get(name) {
            Some(g) => g.data(),
            None => {
                zeros = vec![0.0; n];
                &zeros
            }
        };
        entry.step += 1;
        let t = entry.step as i32;
        let (c1, c2) = (1.0 - opt.beta1.powi(t), 1.0 - opt.beta2.powi(t));
        let (mut m, mut v, mut x) = (entry.first_moment.to_vec(), entry.second_moment.to_vec(), entry.value.to_vec());
        for k in 0..n {
            m[k] = opt.beta1 * m[k] + (1.0 - opt.beta1) * g[k];
            v[k] = opt.beta2 * v[k] + (1.0 - opt.beta2) * g[k] * g[k];
            x[k] -= opt.lr * (m[k] / c1) / ((v[k] / c2).sqrt() + opt.eps);
        }
        let shape = entry.value.shape().to_vec();
        entry.first_moment = Tensor::new(&shape, m)?;
        entry.second_moment = Tensor::new(&shape, v)?;
        entry.value = Tensor::new(&shape, x)?;
    }
    Ok(())
}
