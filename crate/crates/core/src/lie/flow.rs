//! Exponentials of velocity fields: scaling and squaring for gridded
//! fields, classical RK4 for MLP velocities.

use super::grid::identity_grid;
use crate::autodiff::{Tensor, Var};
use crate::error::{Error, Result};

/// Displacement `φ_K − id` after `steps` rounds of self-composition of
/// `id + v / 2^steps`. `v` is `[h,w,2]` in normalized units.
pub fn svf_displacement<'t>(v: &Var<'t>, steps: usize) -> Result<Var<'t>> {
    let shape = v.shape();
    if shape.len() != 3 || shape[2] != 2 {
        return Err(Error::shape("svf_exp", &[shape]));
    }
    if steps == 0 {
        return Err(Error::invalid("svf_exp", "need at least one squaring step"));
    }
    let id = v.tape().constant(identity_grid(shape[0], shape[1]));
    let mut u = v.scale(0.5f64.powi(steps as i32))?;
    for _ in 0..steps {
        let pos = id.add(&u)?;
        u = u.add(&u.grid_sample(&pos)?)?;
    }
    Ok(u)
}

/// Position field `exp(v)` sampled on the velocity grid, `[h,w,2]`.
pub fn svf_exp<'t>(v: &Var<'t>, steps: usize) -> Result<Var<'t>> {
    let u = svf_displacement(v, steps)?;
    let shape = v.shape();
    u.tape().constant(identity_grid(shape[0], shape[1])).add(&u)
}

/// One dense layer, `y = x·W + b` with `W: [in,out]`, `b: [1,out]`.
#[derive(Clone, Debug)]
pub struct Dense<'t> {
    pub weight: Var<'t>,
    pub bias: Var<'t>,
}

impl<'t> Dense<'t> {
    pub fn forward(&self, x: &Var<'t>) -> Result<Var<'t>> {
        let n = x.shape()[0];
        let ones = x.tape().constant(Tensor::full(&[n, 1], 1.0));
        x.matmul(&self.weight)?.add(&ones.matmul(&self.bias)?)
    }
}

/// Coordinate MLP `ℝᴰ → ℝᴰ` with tanh hidden activations.
#[derive(Clone, Debug)]
pub struct MlpWeights<'t> {
    pub layers: Vec<Dense<'t>>,
}

/// Hidden widths of velocity MLPs.
pub const MLP_WIDTHS: [usize; 4] = [2, 16, 16, 2];

/// Number of scalars needed to fill an MLP with the given layer widths.
pub fn mlp_param_count(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl<'t> MlpWeights<'t> {
    /// Unpacks a flat vector: for each layer, the row-major `[in,out]`
    /// weight followed by the `out` biases.
    pub fn from_flat(flat: &Var<'t>, widths: &[usize]) -> Result<Self> {
        let need = mlp_param_count(widths);
        if flat.shape() != [need] {
            return Err(Error::shape("mlp_unpack", &[flat.shape(), &[need]]));
        }
        let mut offset = 0;
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for w in widths.windows(2) {
            let (i, o) = (w[0], w[1]);
            let weight = flat.slice(0, offset, i * o)?.reshape(&[i, o])?;
            offset += i * o;
            let bias = flat.slice(0, offset, o)?.reshape(&[1, o])?;
            offset += o;
            layers.push(Dense { weight, bias });
        }
        Ok(Self { layers })
    }

    /// Evaluates on points `[n,2]` in the unit square; inputs are mapped to
    /// `[-1,1]` first.
    pub fn forward(&self, pts: &Var<'t>) -> Result<Var<'t>> {
        let mut h = pts.scale(2.0)?.add_scalar(-1.0)?;
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h)?;
            if k < last {
                h = h.tanh()?;
            }
        }
        Ok(h)
    }
}

/// Velocity `v(z) = f₊(z) − f₋(z)`; `minus` is absent for
/// non-antisymmetrized fields.
#[derive(Clone, Debug)]
pub struct MlpVelocity<'t> {
    pub plus: MlpWeights<'t>,
    pub minus: Option<MlpWeights<'t>>,
}

impl<'t> MlpVelocity<'t> {
    pub fn eval(&self, pts: &Var<'t>, scale: f64) -> Result<Var<'t>> {
        let mut v = self.plus.forward(pts)?;
        if let Some(minus) = &self.minus {
            v = v.sub(&minus.forward(pts)?)?;
        }
        if !v.value().is_finite() {
            return Err(Error::NonFinite("MLP velocity"));
        }
        if scale == 1.0 {
            Ok(v)
        } else {
            v.scale(scale)
        }
    }
}

/// Integrates `dΦ/dt = s·v(Φ)`, `Φ(0) = x` to `t = 1` with classical RK4.
pub fn rk4_flow<'t>(v: &MlpVelocity<'t>, scale: f64, steps: usize, pts: &Var<'t>) -> Result<Var<'t>> {
    if steps == 0 {
        return Err(Error::invalid("rk4_flow", "need at least one step"));
    }
    if scale == 0.0 {
        return Ok(pts.clone());
    }
    let h = 1.0 / steps as f64;
    let mut x = pts.clone();
    for _ in 0..steps {
        let k1 = v.eval(&x, scale)?;
        let k2 = v.eval(&x.add(&k1.scale(0.5 * h)?)?, scale)?;
        let k3 = v.eval(&x.add(&k2.scale(0.5 * h)?)?, scale)?;
        let k4 = v.eval(&x.add(&k3.scale(h)?)?, scale)?;
        let incr = k1.add(&k4)?.add(&k2.add(&k3)?.scale(2.0)?)?.scale(h / 6.0)?;
        x = x.add(&incr)?;
    }
    Ok(x)
}
