use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::expm::{mat_exp, mat_sqrt};
use super::flow::{rk4_flow, svf_displacement, MlpVelocity};
use super::grid::{identity_grid, CENTER};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const DEFAULT_SQUARING_STEPS: usize = 7;
pub const DEFAULT_RK4_STEPS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpSettings {
    pub squaring_steps: usize,
    pub rk4_steps: usize,
}

impl Default for ExpSettings {
    fn default() -> Self {
        Self {
            squaring_steps: DEFAULT_SQUARING_STEPS,
            rk4_steps: DEFAULT_RK4_STEPS,
        }
    }
}

/// Tangent vector at the identity of a transformation group.
#[derive(Clone, Debug)]
pub enum LieAlgebraElement<'t> {
    /// `(D+1)×(D+1)` matrix with zero last row, acting about the domain
    /// center.
    HomMatrix(Var<'t>),
    /// `[h,w,D]` velocity grid in normalized units, bilinearly interpolated.
    VelocityGrid(Var<'t>),
    VelocityMlp(MlpVelocity<'t>),
}

impl<'t> LieAlgebraElement<'t> {
    pub fn hom_matrix(m: Var<'t>) -> Result<Self> {
        let s = m.shape();
        if s.len() != 2 || s[0] != s[1] || s[0] < 2 {
            return Err(Error::shape("hom_matrix", &[s]));
        }
        let n = s[0];
        if m.data()[(n - 1) * n..].iter().any(|&v| v != 0.0) {
            return Err(Error::invalid("hom_matrix", "last row must be zero"));
        }
        Ok(Self::HomMatrix(m))
    }

    pub fn velocity_grid(v: Var<'t>) -> Result<Self> {
        let s = v.shape();
        if s.len() != 3 || s[2] != 2 {
            return Err(Error::shape("velocity_grid", &[s]));
        }
        Ok(Self::VelocityGrid(v))
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::HomMatrix(m) => m.shape()[0] - 1,
            Self::VelocityGrid(v) => v.shape()[2],
            Self::VelocityMlp(_) => 2,
        }
    }

    fn is_finite(&self) -> bool {
        match self {
            Self::HomMatrix(m) | Self::VelocityGrid(m) => m.value().is_finite(),
            Self::VelocityMlp(mlp) => std::iter::once(&mlp.plus)
                .chain(mlp.minus.as_ref())
                .flat_map(|w| w.layers.iter())
                .all(|l| l.weight.value().is_finite() && l.bias.value().is_finite()),
        }
    }
}

/// `exp(scale · g)` with memoized evaluation.
#[derive(Clone)]
pub struct ExpPrimitive<'t> {
    algebra: Rc<LieAlgebraElement<'t>>,
    scale: f64,
    settings: ExpSettings,
    cache: Rc<RefCell<Option<Var<'t>>>>,
    /// Flowed identity grids of MLP velocities, keyed by `(h, w)`.
    grids: Rc<RefCell<Vec<((usize, usize), Var<'t>)>>>,
}

impl fmt::Debug for ExpPrimitive<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExpPrimitive")
            .field("algebra", &self.algebra)
            .field("scale", &self.scale)
            .finish()
    }
}

impl<'t> ExpPrimitive<'t> {
    pub fn algebra(&self) -> &LieAlgebraElement<'t> {
        &self.algebra
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn settings(&self) -> ExpSettings {
        self.settings
    }

    /// Same algebra element, scale multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            algebra: Rc::clone(&self.algebra),
            scale: self.scale * factor,
            settings: self.settings,
            cache: Rc::new(RefCell::new(None)),
            grids: Rc::new(RefCell::new(Vec::new())),
        }
    }

    /// Exponentiated matrix (HomMatrix) or displacement grid (VelocityGrid).
    fn evaluated(&self) -> Result<Option<Var<'t>>> {
        if let Some(v) = self.cache.borrow().as_ref() {
            return Ok(Some(v.clone()));
        }
        let value = match self.algebra.as_ref() {
            LieAlgebraElement::HomMatrix(m) => mat_exp(&scale_var(m, self.scale)?)?,
            LieAlgebraElement::VelocityGrid(v) => svf_displacement(&scale_var(v, self.scale)?, self.settings.squaring_steps)?,
            LieAlgebraElement::VelocityMlp(_) => return Ok(None),
        };
        *self.cache.borrow_mut() = Some(value.clone());
        Ok(Some(value))
    }

    /// `exp(scale · g)` as a homogeneous matrix, for matrix algebras.
    pub fn matrix(&self) -> Result<Var<'t>> {
        match self.algebra.as_ref() {
            LieAlgebraElement::HomMatrix(_) => Ok(self.evaluated()?.expect("matrix algebra")),
            _ => Err(Error::invalid("exp_primitive", "not a matrix algebra element")),
        }
    }

    fn apply(&self, pts: &Var<'t>) -> Result<Var<'t>> {
        match self.algebra.as_ref() {
            LieAlgebraElement::HomMatrix(_) => apply_homogeneous(&self.matrix()?, pts),
            LieAlgebraElement::VelocityGrid(_) => {
                let u = self.evaluated()?.expect("grid algebra");
                pts.add(&u.grid_sample(pts)?)
            }
            LieAlgebraElement::VelocityMlp(mlp) => rk4_flow(mlp, self.scale, self.settings.rk4_steps, pts),
        }
    }

    fn grid_points(&self, tape: &'t Tape, h: usize, w: usize) -> Result<Var<'t>> {
        if !matches!(self.algebra.as_ref(), LieAlgebraElement::VelocityMlp(_)) {
            return self.apply(&identity_points(tape, h, w)?);
        }
        if let Some((_, v)) = self.grids.borrow().iter().find(|(k, _)| *k == (h, w)) {
            return Ok(v.clone());
        }
        let v = self.apply(&identity_points(tape, h, w)?)?;
        self.grids.borrow_mut().push(((h, w), v.clone()));
        Ok(v)
    }
}

fn identity_points(tape: &Tape, h: usize, w: usize) -> Result<Var<'_>> {
    Ok(tape.constant(identity_grid(h, w).reshaped(&[h * w, 2])?))
}

fn scale_var<'t>(v: &Var<'t>, s: f64) -> Result<Var<'t>> {
    if s == 1.0 {
        Ok(v.clone())
    } else {
        v.scale(s)
    }
}

/// `x ↦ M·(x − c) + c` for a homogeneous matrix `M`, points `[n,D]`.
fn apply_homogeneous<'t>(m: &Var<'t>, pts: &Var<'t>) -> Result<Var<'t>> {
    let d = m.shape()[0] - 1;
    if pts.shape().len() != 2 || pts.shape()[1] != d {
        return Err(Error::shape("apply_points", &[m.shape(), pts.shape()]));
    }
    let n = pts.shape()[0];
    let ones = pts.tape().constant(Tensor::full(&[n, 1], 1.0));
    let hom = Var::concat(&[&pts.add_scalar(-CENTER)?, &ones], 1)?;
    hom.matmul(&m.transpose()?)?.slice(1, 0, d)?.add_scalar(CENTER)
}

/// What a transform supports beyond point evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Capabilities {
    pub can_apply: bool,
    /// Exact algebra scaling: square roots and inverses by `exp(s·g)`.
    pub can_scale_algebra: bool,
    /// Some square root is available (algebra scaling or a matrix root).
    pub has_square_root: bool,
}

/// A map of the normalized domain `ℝᴰ → ℝᴰ`.
#[derive(Clone, Debug)]
pub enum Transform<'t> {
    Exp(ExpPrimitive<'t>),
    /// Homogeneous matrix used as-is (not an exponential), acting about the
    /// domain center.
    Matrix(Var<'t>),
    /// `[T₀, T₁, …, Tₙ]` applies as `T₀(T₁(…Tₙ(x)))`.
    Composite(Vec<Transform<'t>>),
}

pub fn exponentiate<'t>(g: impl Into<Rc<LieAlgebraElement<'t>>>, scale: f64, settings: ExpSettings) -> Result<Transform<'t>> {
    let algebra = g.into();
    if !scale.is_finite() {
        return Err(Error::NonFinite("exponentiate scale"));
    }
    if !algebra.is_finite() {
        return Err(Error::NonFinite("Lie algebra element"));
    }
    Ok(Transform::Exp(ExpPrimitive {
        algebra,
        scale,
        settings,
        cache: Rc::new(RefCell::new(None)),
        grids: Rc::new(RefCell::new(Vec::new())),
    }))
}

/// `first ∘ second`: `x ↦ first(second(x))`.
pub fn compose<'t>(first: &Transform<'t>, second: &Transform<'t>) -> Result<Transform<'t>> {
    if let (Some(a), Some(b)) = (first.dim(), second.dim()) {
        if a != b {
            return Err(Error::invalid("compose", format!("dimension mismatch: {a} vs {b}")));
        }
    }
    let mut parts = Vec::new();
    for t in [first, second] {
        match t {
            Transform::Composite(inner) => parts.extend(inner.iter().cloned()),
            other => parts.push(other.clone()),
        }
    }
    Ok(Transform::Composite(parts))
}

/// Samples `image` (`[h,w]`) at `T(x)` for every pixel center `x`.
pub fn warp_image<'t>(image: &Var<'t>, t: &Transform<'t>) -> Result<Var<'t>> {
    let s = image.shape();
    if s.len() != 2 {
        return Err(Error::shape("warp_image", &[s]));
    }
    let coords = t.position_field(image.tape(), s[0], s[1])?;
    image.grid_sample(&coords)
}

impl<'t> Transform<'t> {
    pub fn identity() -> Self {
        Transform::Composite(Vec::new())
    }

    pub fn matrix(m: Var<'t>) -> Result<Self> {
        let s = m.shape();
        if s.len() != 2 || s[0] != s[1] || s[0] < 2 {
            return Err(Error::shape("matrix_transform", &[s]));
        }
        Ok(Transform::Matrix(m))
    }

    pub fn dim(&self) -> Option<usize> {
        match self {
            Transform::Exp(e) => Some(e.algebra.dim()),
            Transform::Matrix(m) => Some(m.shape()[0] - 1),
            Transform::Composite(parts) => parts.iter().find_map(Transform::dim),
        }
    }

    pub fn capabilities(&self) -> Capabilities {
        match self {
            Transform::Exp(_) => Capabilities {
                can_apply: true,
                can_scale_algebra: true,
                has_square_root: true,
            },
            Transform::Matrix(_) => Capabilities {
                can_apply: true,
                can_scale_algebra: false,
                has_square_root: true,
            },
            Transform::Composite(_) => Capabilities {
                can_apply: true,
                can_scale_algebra: false,
                has_square_root: false,
            },
        }
    }

    /// `exp(factor · s · g)` for exponential primitives.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        match self {
            Transform::Exp(e) => Ok(Transform::Exp(e.scaled(factor))),
            _ => Err(Error::invalid("scale_algebra", "transform has no algebra to scale")),
        }
    }

    pub fn inverse(&self) -> Result<Self> {
        self.scaled(-1.0)
    }

    /// A transform `R` with `R ∘ R = self`.
    pub fn sqrt(&self) -> Result<Self> {
        match self {
            Transform::Exp(e) => Ok(Transform::Exp(e.scaled(0.5))),
            Transform::Matrix(m) => Ok(Transform::Matrix(mat_sqrt(m)?)),
            Transform::Composite(_) => Err(Error::invalid("sqrt", "composite transforms have no square root")),
        }
    }

    /// Maps points `[n,D]`.
    pub fn apply_points(&self, pts: &Var<'t>) -> Result<Var<'t>> {
        match self {
            Transform::Exp(e) => e.apply(pts),
            Transform::Matrix(m) => apply_homogeneous(m, pts),
            Transform::Composite(parts) => {
                let mut x = pts.clone();
                for p in parts.iter().rev() {
                    x = p.apply_points(&x)?;
                }
                Ok(x)
            }
        }
    }

    /// `T(identity grid)` as `[h,w,2]`.
    pub fn position_field(&self, tape: &'t Tape, h: usize, w: usize) -> Result<Var<'t>> {
        self.grid_points(tape, h, w)?.reshape(&[h, w, 2])
    }

    /// `T` at the `h·w` pixel centers as `[h·w, D]`.
    fn grid_points(&self, tape: &'t Tape, h: usize, w: usize) -> Result<Var<'t>> {
        match self {
            Transform::Exp(e) => e.grid_points(tape, h, w),
            Transform::Composite(parts) if !parts.is_empty() => {
                let mut x = parts[parts.len() - 1].grid_points(tape, h, w)?;
                for p in parts[..parts.len() - 1].iter().rev() {
                    x = p.apply_points(&x)?;
                }
                Ok(x)
            }
            _ => self.apply_points(&identity_points(tape, h, w)?),
        }
    }
}
