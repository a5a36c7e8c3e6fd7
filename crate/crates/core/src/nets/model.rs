use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::step::{Family, Parameterization, Resolution, StepNetwork, StepSpec};
use crate::autodiff::{BoundParams, ParamStore, Var};
use crate::error::{Error, Result};
use crate::lie::{compose, warp_image, ExpSettings, Transform};

pub const DESCRIPTOR_VERSION: u32 = 1;

/// Composition tree. `first` runs on the original pair, `rest` on the pair
/// it produces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ModelNode {
    Step(StepSpec),
    /// `Φ[A,B] ∘ Ψ[A∘Φ[A,B], B]`.
    TwoStep { first: Box<ModelNode>, rest: Box<ModelNode> },
    /// `√Φ[A,B] ∘ Ψ[Â,B̂] ∘ √Φ[A,B]` with `Â = A∘√Φ[A,B]`, `B̂ = B∘√Φ[B,A]`.
    Consistent { first: Box<ModelNode>, rest: Box<ModelNode> },
}

impl ModelNode {
    pub fn step(spec: StepSpec) -> Self {
        ModelNode::Step(spec)
    }

    pub fn two_step(first: ModelNode, rest: ModelNode) -> Self {
        ModelNode::TwoStep {
            first: Box::new(first),
            rest: Box::new(rest),
        }
    }

    pub fn consistent(first: ModelNode, rest: ModelNode) -> Self {
        ModelNode::Consistent {
            first: Box::new(first),
            rest: Box::new(rest),
        }
    }

    /// Right fold of [`ModelNode::consistent`]; with `coarse_to_fine`, every
    /// step but the last runs at half resolution.
    pub fn n_step(specs: &[StepSpec], coarse_to_fine: bool) -> Result<Self> {
        let (last, init) = specs.split_last().ok_or_else(|| Error::Model("n-step model needs at least one step".into()))?;
        let mut node = ModelNode::Step(*last);
        for spec in init.iter().rev() {
            let spec = if coarse_to_fine { spec.at(Resolution::Half) } else { *spec };
            node = ModelNode::consistent(ModelNode::Step(spec), node);
        }
        Ok(node)
    }

    fn collect<'a>(&'a self, out: &mut Vec<&'a StepSpec>) {
        match self {
            ModelNode::Step(s) => out.push(s),
            ModelNode::TwoStep { first, rest } | ModelNode::Consistent { first, rest } => {
                first.collect(out);
                rest.collect(out);
            }
        }
    }

    fn check(&self) -> Result<()> {
        match self {
            ModelNode::Step(s) => s.validate(),
            ModelNode::TwoStep { first, rest } => {
                first.check()?;
                rest.check()
            }
            ModelNode::Consistent { first, rest } => {
                if !matches!(first.as_ref(), ModelNode::Step(_)) {
                    return Err(Error::Model(
                        "the first child of a consistent node must be a single step with a square root".into(),
                    ));
                }
                first.check()?;
                rest.check()
            }
        }
    }

    /// Exactly inverse consistent by construction: antisymmetric leaves
    /// joined only by consistent nodes.
    pub fn is_consistent_by_construction(&self) -> bool {
        match self {
            ModelNode::Step(s) => s.is_antisymmetric(),
            ModelNode::TwoStep { .. } => false,
            ModelNode::Consistent { first, rest } => first.is_consistent_by_construction() && rest.is_consistent_by_construction(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub version: u32,
    #[serde(default)]
    pub name: String,
    /// Seed for parameter initialization.
    pub seed: u64,
    #[serde(default)]
    pub exp: ExpSettings,
    pub tree: ModelNode,
}

impl ModelDescriptor {
    pub fn new(name: impl Into<String>, seed: u64, tree: ModelNode) -> Self {
        Self {
            version: DESCRIPTOR_VERSION,
            name: name.into(),
            seed,
            exp: ExpSettings::default(),
            tree,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let d: Self = serde_json::from_str(s)?;
        if d.version != DESCRIPTOR_VERSION {
            return Err(Error::Model(format!("unsupported descriptor version {}", d.version)));
        }
        Ok(d)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

/// Output of a model on one ordered pair.
#[derive(Clone, Debug)]
pub struct ModelOutput<'t> {
    pub transform: Transform<'t>,
    /// Velocity grids of the SVF steps evaluated on the way.
    pub velocities: Vec<Var<'t>>,
}

#[derive(Clone, Debug)]
pub struct RegistrationModel {
    descriptor: ModelDescriptor,
    leaves: Vec<StepNetwork>,
}

impl RegistrationModel {
    pub fn new(descriptor: ModelDescriptor) -> Result<Self> {
        descriptor.tree.check()?;
        let mut specs = Vec::new();
        descriptor.tree.collect(&mut specs);
        let leaves = specs
            .into_iter()
            .enumerate()
            .map(|(k, s)| StepNetwork::new(*s, format!("step{k}")))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { descriptor, leaves })
    }

    pub fn descriptor(&self) -> &ModelDescriptor {
        &self.descriptor
    }

    pub fn name(&self) -> &str {
        &self.descriptor.name
    }

    pub fn leaves(&self) -> &[StepNetwork] {
        &self.leaves
    }

    pub fn is_consistent_by_construction(&self) -> bool {
        self.descriptor.tree.is_consistent_by_construction()
    }

    /// Whether any step is a dense (grid or MLP) deformation.
    pub fn has_dense_steps(&self) -> bool {
        self.leaves.iter().any(|l| matches!(l.spec.family, Family::Svf | Family::Mlp))
    }

    /// Fresh parameters, deterministic in the descriptor seed.
    pub fn init_params(&self) -> Result<ParamStore> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.descriptor.seed);
        let mut store = ParamStore::new();
        for leaf in &self.leaves {
            leaf.init_params(&mut store, &mut rng)?;
        }
        Ok(store)
    }

    /// `model[A,B]`: a transform with `A∘T ≈ B`.
    pub fn forward<'t>(&self, p: &BoundParams<'t>, a: &Var<'t>, b: &Var<'t>) -> Result<ModelOutput<'t>> {
        if a.shape() != b.shape() || a.shape().len() != 2 {
            return Err(Error::shape("model", &[a.shape(), b.shape()]));
        }
        let mut cursor = 0;
        let mut velocities = Vec::new();
        let transform = self.eval(&self.descriptor.tree, p, a, b, &mut cursor, &mut velocities)?;
        Ok(ModelOutput { transform, velocities })
    }

    fn eval<'t>(
        &self,
        node: &ModelNode,
        p: &BoundParams<'t>,
        a: &Var<'t>,
        b: &Var<'t>,
        cursor: &mut usize,
        velocities: &mut Vec<Var<'t>>,
    ) -> Result<Transform<'t>> {
        let settings = self.descriptor.exp;
        match node {
            ModelNode::Step(_) => {
                let leaf = &self.leaves[*cursor];
                *cursor += 1;
                let out = leaf.forward(p, a, b, settings)?;
                velocities.extend(out.velocity);
                Ok(out.transform)
            }
            ModelNode::TwoStep { first, rest } => {
                let phi = self.eval(first, p, a, b, cursor, velocities)?;
                let moved = warp_image(a, &phi)?;
                let psi = self.eval(rest, p, &moved, b, cursor, velocities)?;
                compose(&phi, &psi)
            }
            ModelNode::Consistent { first, rest } => {
                let leaf = &self.leaves[*cursor];
                let phi = self.eval(first, p, a, b, cursor, velocities)?;
                let half = phi.sqrt()?;
                let half_ba = match (&phi, leaf.spec.param) {
                    (Transform::Exp(_), Parameterization::Antisym) => phi.scaled(-0.5)?,
                    _ => leaf.forward(p, b, a, settings)?.transform.sqrt()?,
                };
                let a_hat = warp_image(a, &half)?;
                let b_hat = warp_image(b, &half_ba)?;
                let psi = self.eval(rest, p, &a_hat, &b_hat, cursor, velocities)?;
                compose(&half, &compose(&psi, &half)?)
            }
        }
    }
}
