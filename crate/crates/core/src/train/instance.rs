use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::nets::RegistrationModel;

use super::objective::{pair_gradient, pair_loss, Objective};
use super::optim::{adam_step, Adam};

pub const DEFAULT_INSTANCE_STEPS: usize = 50;

#[derive(Clone, Debug)]
pub struct InstanceResult {
    /// Weights tuned to this pair; `model.forward` with them gives the
    /// optimized transform.
    pub params: ParamStore,
    pub loss_before: f64,
    pub loss_after: f64,
}

/// Continues Adam on the training loss of the single pair `(a, b)`,
/// starting from `params` with fresh optimizer moments.
pub fn instance_optimize(model: &RegistrationModel, params: &ParamStore, a: &Tensor, b: &Tensor, obj: Objective, opt: &Adam, steps: usize) -> Result<InstanceResult> {
    let mut tuned = params.clone();
    tuned.reset_optimizer_state();
    let mut loss_before = None;
    for it in 0..steps {
        let (values, grads) = pair_gradient(model, &tuned, a, b, obj)?;
        if !values.total.is_finite() {
            return Err(Error::NonFiniteLoss(it));
        }
        loss_before.get_or_insert(values.total);
        adam_step(&mut tuned, &grads, opt)?;
    }
    let last = pair_loss(model, &tuned, a, b, obj)?;
    if !last.total.is_finite() {
        return Err(Error::NonFiniteLoss(steps));
    }
    Ok(InstanceResult {
        params: if steps == 0 { params.clone() } else { tuned },
        loss_before: loss_before.unwrap_or(last.total),
        loss_after: last.total,
    })
}
