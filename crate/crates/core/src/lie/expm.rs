//! Matrix exponential and matrix square root built from tape primitives.

use crate::autodiff::{Tensor, Var};
use crate::error::{Error, Result};

/// Number of Taylor terms used after scaling.
pub const TAYLOR_TERMS: usize = 18;

/// Max absolute column sum.
pub fn norm1(m: &Tensor) -> f64 {
    let n = m.shape()[1];
    (0..n)
        .map(|j| m.data().iter().skip(j).step_by(n).map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `exp(M)` by scaling and squaring: halve until `‖M‖₁ ≤ 0.5`, sum
/// [`TAYLOR_TERMS`] terms of the series in Horner form, square back.
pub fn mat_exp<'t>(m: &Var<'t>) -> Result<Var<'t>> {
    let shape = m.shape();
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(Error::shape("mat_exp", &[shape]));
    }
    if !m.value().is_finite() {
        return Err(Error::NonFinite("mat_exp input"));
    }
    let n = shape[0];
    let mut squarings = 0u32;
    let mut norm = norm1(m.value());
    while norm > 0.5 {
        norm *= 0.5;
        squarings += 1;
    }
    let tape = m.tape();
    let eye = tape.constant(Tensor::eye(n));
    let a = if squarings > 0 { m.scale(0.5f64.powi(squarings as i32))? } else { m.clone() };

    let mut e = eye.clone();
    for k in (1..TAYLOR_TERMS).rev() {
        e = eye.add(&a.matmul(&e)?.scale(1.0 / k as f64)?)?;
    }
    for _ in 0..squarings {
        e = e.matmul(&e)?;
    }
    Ok(e)
}

/// Principal square root by the coupled Newton–Schulz iteration.
///
/// Converges when `‖I − M‖ < 1`; anything else is reported as an error
/// rather than returning a wrong root.
pub fn mat_sqrt<'t>(m: &Var<'t>) -> Result<Var<'t>> {
    let shape = m.shape();
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(Error::shape("mat_sqrt", &[shape]));
    }
    if !m.value().is_finite() {
        return Err(Error::NonFinite("mat_sqrt input"));
    }
    let n = shape[0];
    let tape = m.tape();
    let eye3 = tape.constant(Tensor::eye(n).map(|v| 3.0 * v));
    let mut y = m.clone();
    let mut z = tape.constant(Tensor::eye(n));
    for _ in 0..40 {
        let t = eye3.sub(&z.matmul(&y)?)?.scale(0.5)?;
        y = y.matmul(&t)?;
        z = t.matmul(&z)?;
        let resid = residual(y.value(), m.value());
        if !resid.is_finite() {
            break;
        }
        if resid < 1e-14 * (1.0 + m.value().max_abs()) {
            return Ok(y);
        }
    }
    Err(Error::invalid("mat_sqrt", "Newton-Schulz iteration did not converge"))
}

fn residual(y: &Tensor, m: &Tensor) -> f64 {
    let n = m.shape()[0];
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            let s: f64 = (0..n).map(|k| y.data()[i * n + k] * y.data()[k * n + j]).sum();
            worst = worst.max((s - m.data()[i * n + j]).abs());
        }
    }
    worst
}
