use serde::{Deserialize, Serialize};

use super::model::{ModelDescriptor, ModelNode};
use super::step::{Family, Parameterization, Resolution, StepSpec};
use crate::error::{Error, Result};

/// Models of the registration zoo, in display order.
pub const ZOO_MODELS: [&str; 6] = ["rigid", "affine", "svf", "mlp", "tsc", "nsc"];

pub fn zoo_descriptor(name: &str, seed: u64) -> Result<ModelDescriptor> {
    let tree = match name {
        "rigid" => ModelNode::step(StepSpec::new(Family::Rigid)),
        "affine" => ModelNode::step(StepSpec::new(Family::Affine)),
        "svf" => ModelNode::step(StepSpec::new(Family::Svf)),
        "mlp" => ModelNode::step(StepSpec::new(Family::Mlp)),
        "tsc" => ModelNode::n_step(&[StepSpec::new(Family::Mlp), StepSpec::new(Family::Svf)], true)?,
        "nsc" => ModelNode::n_step(
            &[
                StepSpec::new(Family::Affine),
                StepSpec::new(Family::Affine),
                StepSpec::new(Family::Svf),
                StepSpec::new(Family::Svf),
            ],
            true,
        )?,
        other => return Err(Error::Model(format!("unknown zoo model {other:?}"))),
    };
    Ok(ModelDescriptor::new(name, seed, tree))
}

/// Composition axis of the affine grid experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Composition {
    OneStep,
    TwoStep,
    Consistent,
}

impl Composition {
    pub const ALL: [Composition; 3] = [Composition::OneStep, Composition::TwoStep, Composition::Consistent];

    pub fn label(self) -> &'static str {
        match self {
            Composition::OneStep => "one_step",
            Composition::TwoStep => "two_step",
            Composition::Consistent => "tsc",
        }
    }
}

pub const GRID_PARAMS: [Parameterization; 3] = [Parameterization::Direct, Parameterization::Exp, Parameterization::Antisym];

pub fn param_label(p: Parameterization) -> &'static str {
    match p {
        Parameterization::Direct => "direct",
        Parameterization::Exp => "exp",
        Parameterization::Antisym => "antisym",
    }
}

/// One cell of the affine grid: affine steps with the given output
/// parameterization, joined by the given composition operator.
pub fn affine_grid_descriptor(param: Parameterization, comp: Composition, seed: u64) -> ModelDescriptor {
    let spec = StepSpec::new(Family::Affine).with_param(param);
    let tree = match comp {
        Composition::OneStep => ModelNode::step(spec),
        Composition::TwoStep => ModelNode::two_step(ModelNode::step(spec.at(Resolution::Half)), ModelNode::step(spec)),
        Composition::Consistent => ModelNode::consistent(ModelNode::step(spec.at(Resolution::Half)), ModelNode::step(spec)),
    };
    ModelDescriptor::new(format!("{}_{}", comp.label(), param_label(param)), seed, tree)
}
