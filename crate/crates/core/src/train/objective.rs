use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{BoundParams, ParamStore, Tape, Tensor, Var};
use crate::error::Result;
use crate::lie::warp_image;
use crate::losses::{bending_energy, lncc};
use crate::nets::{ModelOutput, RegistrationModel};

/// Loss weights: `−lncc(A∘T, B, σ) + λ·Σ bending(v)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub lambda: f64,
    /// Pixels.
    pub sigma: f64,
}

impl Default for Objective {
    fn default() -> Self {
        Self { lambda: 5.0, sigma: 5.0 }
    }
}

#[derive(Clone, Debug)]
pub struct LossTerms<'t> {
    pub total: Var<'t>,
    /// `−LNCC` of the warped moving image against the fixed image.
    pub similarity: Var<'t>,
    /// Unweighted bending energy summed over SVF steps; `None` without SVF steps.
    pub regularizer: Option<Var<'t>>,
    pub output: ModelOutput<'t>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossValues {
    pub total: f64,
    pub similarity: f64,
    pub regularizer: f64,
}

impl LossTerms<'_> {
    pub fn values(&self) -> LossValues {
        LossValues {
            total: self.total.item(),
            similarity: self.similarity.item(),
            regularizer: self.regularizer.as_ref().map_or(0.0, Var::item),
        }
    }
}

pub fn loss<'t>(model: &RegistrationModel, p: &BoundParams<'t>, a: &Var<'t>, b: &Var<'t>, obj: Objective) -> Result<LossTerms<'t>> {
    let output = model.forward(p, a, b)?;
    let warped = warp_image(a, &output.transform)?;
    let similarity = lncc(&warped, b, obj.sigma)?.neg()?;
    let mut regularizer: Option<Var<'t>> = None;
    for v in &output.velocities {
        let e = bending_energy(v)?;
        regularizer = Some(match regularizer {
            Some(r) => r.add(&e)?,
            None => e,
        });
    }
    let total = match &regularizer {
        Some(r) if obj.lambda != 0.0 => similarity.add(&r.scale(obj.lambda)?)?,
        _ => similarity.clone(),
    };
    Ok(LossTerms {
        total,
        similarity,
        regularizer,
        output,
    })
}

/// Loss values and parameter gradients for one ordered pair. Gradients are
/// empty when the loss is not finite.
pub fn pair_gradient(model: &RegistrationModel, params: &ParamStore, a: &Tensor, b: &Tensor, obj: Objective) -> Result<(LossValues, BTreeMap<String, Tensor>)> {
    let tape = Tape::new();
    let p = params.bind(&tape);
    let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let terms = loss(model, &p, &va, &vb, obj)?;
    let values = terms.values();
    if !values.total.is_finite() {
        return Ok((values, BTreeMap::new()));
    }
    let grads = tape.backward(&terms.total)?;
    Ok((values, p.gradients(&grads)))
}

/// Loss values for one ordered pair, without gradients.
pub fn pair_loss(model: &RegistrationModel, params: &ParamStore, a: &Tensor, b: &Tensor, obj: Objective) -> Result<LossValues> {
    let tape = Tape::new();
    let p = params.bind(&tape);
    let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
    Ok(loss(model, &p, &va, &vb, obj)?.values())
}
