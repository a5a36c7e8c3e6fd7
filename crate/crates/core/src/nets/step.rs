use rand::Rng;
use serde::{Deserialize, Serialize};

use super::backbone::{backbone_forward, init_backbone, BackboneKind, BackboneOutput};
use crate::autodiff::{BoundParams, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::lie::{exponentiate, mlp_param_count, ExpSettings, LieAlgebraElement, MlpVelocity, MlpWeights, Transform, MLP_WIDTHS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Rigid,
    Affine,
    Svf,
    Mlp,
}

/// How the backbone output becomes a transform.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    /// `exp(N[A,B] − N[B,A])`.
    #[default]
    Antisym,
    /// `exp(N[A,B])`.
    Exp,
    /// `I + N[A,B]` used directly as a matrix (affine only).
    Direct,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    #[default]
    Full,
    /// Inputs average-pooled by 2 before the backbone.
    Half,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepSpec {
    pub family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backbone: Option<BackboneKind>,
    #[serde(default)]
    pub param: Parameterization,
    #[serde(default)]
    pub resolution: Resolution,
}

impl StepSpec {
    pub fn new(family: Family) -> Self {
        Self {
            family,
            backbone: None,
            param: Parameterization::Antisym,
            resolution: Resolution::Full,
        }
    }

    pub fn with_param(mut self, param: Parameterization) -> Self {
        self.param = param;
        self
    }

    pub fn at(mut self, resolution: Resolution) -> Self {
        self.resolution = resolution;
        self
    }

    pub fn backbone_kind(&self) -> BackboneKind {
        self.backbone.unwrap_or(match self.family {
            Family::Svf => BackboneKind::SmallUnet,
            _ => BackboneKind::ConvMatrixNet,
        })
    }

    fn output(&self) -> BackboneOutput {
        match self.family {
            Family::Rigid | Family::Affine => BackboneOutput::Vector(6),
            Family::Mlp => BackboneOutput::Vector(mlp_param_count(&MLP_WIDTHS)),
            Family::Svf => BackboneOutput::Grid,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let kind = self.backbone_kind();
        let ok_backbone = matches!(
            (self.family, kind),
            (Family::Svf, BackboneKind::SmallUnet) | (Family::Rigid | Family::Affine | Family::Mlp, BackboneKind::ConvMatrixNet)
        );
        if !ok_backbone {
            return Err(Error::Model(format!("{:?} steps cannot use a {kind:?} backbone", self.family)));
        }
        if self.param == Parameterization::Direct && self.family != Family::Affine {
            return Err(Error::Model(format!("direct parameterization is only defined for affine steps, not {:?}", self.family)));
        }
        Ok(())
    }

    /// True when swapping the inputs negates the algebra element.
    pub fn is_antisymmetric(&self) -> bool {
        self.param == Parameterization::Antisym
    }
}

/// One leaf of a model tree, bound to its parameter prefix.
#[derive(Clone, Debug)]
pub struct StepNetwork {
    pub spec: StepSpec,
    pub prefix: String,
}

/// Result of evaluating one step on a pair.
#[derive(Clone, Debug)]
pub struct StepOutput<'t> {
    pub transform: Transform<'t>,
    /// Velocity grid of SVF steps, for the regularizer.
    pub velocity: Option<Var<'t>>,
}

impl StepNetwork {
    pub fn new(spec: StepSpec, prefix: impl Into<String>) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec, prefix: prefix.into() })
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        init_backbone(store, rng, &self.prefix, self.spec.backbone_kind(), self.spec.output())?;
        if self.spec.family == Family::Mlp {
            store.insert(self.base_name(), mlp_base(rng))?;
        }
        Ok(())
    }

    fn base_name(&self) -> String {
        format!("{}.theta0", self.prefix)
    }

    fn working<'t>(&self, img: &Var<'t>) -> Result<Var<'t>> {
        match self.spec.resolution {
            Resolution::Full => Ok(img.clone()),
            Resolution::Half => img.avg_pool2(),
        }
    }

    /// Raw backbone output `N[A,B]` on the working resolution.
    pub fn raw<'t>(&self, p: &BoundParams<'t>, a: &Var<'t>, b: &Var<'t>) -> Result<Var<'t>> {
        if a.shape() != b.shape() || a.shape().len() != 2 {
            return Err(Error::shape("step_network", &[a.shape(), b.shape()]));
        }
        let (h, w) = (a.shape()[0], a.shape()[1]);
        let (a, b) = (self.working(a)?, self.working(b)?);
        let (hh, ww) = (a.shape()[0], a.shape()[1]);
        if self.spec.resolution == Resolution::Half && (hh * 2 != h || ww * 2 != w) {
            return Err(Error::invalid("step_network", format!("half resolution needs even extents, got {h}x{w}")));
        }
        let pair = Var::concat(&[&a.reshape(&[1, hh, ww])?, &b.reshape(&[1, hh, ww])?], 0)?;
        backbone_forward(p, &self.prefix, self.spec.backbone_kind(), &pair)
    }

    /// The algebra element of the step: `N[A,B] − N[B,A]` post-processed for
    /// the family, or `N[A,B]` alone for the non-antisymmetric variants.
    pub fn antisymmetrize_eval<'t>(&self, p: &BoundParams<'t>, a: &Var<'t>, b: &Var<'t>) -> Result<LieAlgebraElement<'t>> {
        if self.spec.param == Parameterization::Direct {
            return Err(Error::Model("direct steps have no algebra element".into()));
        }
        let ab = self.raw(p, a, b)?;
        let ba = if self.spec.is_antisymmetric() { Some(self.raw(p, b, a)?) } else { None };
        match self.spec.family {
            Family::Rigid | Family::Affine => {
                let d = match &ba {
                    Some(ba) => ab.sub(ba)?,
                    None => ab,
                };
                LieAlgebraElement::hom_matrix(hom_from_raw(&d, self.spec.family == Family::Rigid)?)
            }
            Family::Svf => LieAlgebraElement::velocity_grid(match &ba {
                Some(ba) => ab.sub(ba)?,
                None => ab,
            }),
            Family::Mlp => {
                let base = p.get(&self.base_name())?;
                let plus = MlpWeights::from_flat(&base.add(&ab)?, &MLP_WIDTHS)?;
                let minus = match &ba {
                    Some(ba) => Some(MlpWeights::from_flat(&base.add(ba)?, &MLP_WIDTHS)?),
                    None => None,
                };
                Ok(LieAlgebraElement::VelocityMlp(MlpVelocity { plus, minus }))
            }
        }
    }

    pub fn forward<'t>(&self, p: &BoundParams<'t>, a: &Var<'t>, b: &Var<'t>, settings: ExpSettings) -> Result<StepOutput<'t>> {
        if self.spec.param == Parameterization::Direct {
            let n = self.raw(p, a, b)?;
            let eye = a.tape().constant(Tensor::eye(3));
            let m = eye.add(&hom_from_raw(&n, false)?)?;
            return Ok(StepOutput {
                transform: Transform::matrix(m)?,
                velocity: None,
            });
        }
        let g = self.antisymmetrize_eval(p, a, b)?;
        let velocity = match &g {
            LieAlgebraElement::VelocityGrid(v) => Some(v.clone()),
            _ => None,
        };
        Ok(StepOutput {
            transform: exponentiate(g, 1.0, settings)?,
            velocity,
        })
    }
}

/// `[6]` → `3×3` homogeneous matrix with zero last row. The first four
/// entries form the linear block (row-major), the last two the translation.
/// With `skew`, the block is replaced by its skew part `(R − Rᵀ)/2`.
pub fn hom_from_raw<'t>(raw: &Var<'t>, skew: bool) -> Result<Var<'t>> {
    if raw.shape() != [6] {
        return Err(Error::shape("hom_from_raw", &[raw.shape()]));
    }
    let block = raw.slice(0, 0, 4)?.reshape(&[2, 2])?;
    let block = if skew { block.sub(&block.transpose()?)?.scale(0.5)? } else { block };
    let t = raw.slice(0, 4, 2)?.reshape(&[2, 1])?;
    let top = Var::concat(&[&block, &t], 1)?;
    let zero = raw.tape().constant(Tensor::zeros(&[1, 3]));
    Var::concat(&[&top, &zero], 0)
}

/// Random base weights shared by both halves of an MLP velocity, so the
/// velocity is zero at initialization while its gradient is not.
fn mlp_base(rng: &mut impl Rng) -> Tensor {
    let mut data = Vec::with_capacity(mlp_param_count(&MLP_WIDTHS));
    for w in MLP_WIDTHS.windows(2) {
        let bound = (6.0 / (w[0] + w[1]) as f64).sqrt();
        data.extend((0..w[0] * w[1]).map(|_| rng.gen_range(-bound..bound)));
        data.extend(std::iter::repeat(0.0).take(w[1]));
    }
    let n = data.len();
    Tensor::new(&[n], data).expect("packed length")
}
