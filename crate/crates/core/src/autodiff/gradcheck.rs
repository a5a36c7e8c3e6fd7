//! Central finite-difference comparison for tape gradients.
//!
//! The numeric side only ever runs forward passes, so it stays independent
//! of the adjoint rules under test.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckReport {
    /// `‖analytic − numeric‖∞ / max(‖analytic‖∞, ‖numeric‖∞)`, over all inputs.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub max_grad: f64,
}

/// Compares reverse-mode gradients of the scalar `f` against central
/// differences with step `h`, for every element of every input.
pub fn check_gradients<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&tape, &vars)?;
    let grads = tape.backward(&loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|v| grads.wrt(v)).collect();

    let eval = |probe: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = probe.iter().map(|t| tape.leaf(t.clone())).collect();
        Ok(f(&tape, &vars)?.item())
    };

    let mut max_abs_err = 0.0_f64;
    let mut max_grad = 0.0_f64;
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        for i in 0..input.len() {
            let mut plus = input.to_vec();
            let mut minus = input.to_vec();
            plus[i] += h;
            minus[i] -= h;
            probe[k] = Tensor::new(input.shape(), plus)?;
            let fp = eval(&probe)?;
            probe[k] = Tensor::new(input.shape(), minus)?;
            let fm = eval(&probe)?;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[k].data()[i];
            max_abs_err = max_abs_err.max((a - numeric).abs());
            max_grad = max_grad.max(a.abs()).max(numeric.abs());
        }
        probe[k] = input.clone();
    }
    Ok(GradCheckReport {
        max_rel_err: max_abs_err / max_grad.max(1e-8),
        max_abs_err,
        max_grad,
    })
}
