use crate::autodiff::{Tensor, Var};
use crate::error::{Error, Result};

/// Variance floor inside the LNCC denominator.
pub const LNCC_EPS: f64 = 1e-5;

/// Local normalized cross-correlation with a Gaussian window of std `sigma`
/// pixels, averaged over all pixels.
pub fn lncc<'t>(i: &Var<'t>, j: &Var<'t>, sigma: f64) -> Result<Var<'t>> {
    if i.shape() != j.shape() || i.shape().len() != 2 {
        return Err(Error::shape("lncc", &[i.shape(), j.shape()]));
    }
    if !(sigma > 0.0) {
        return Err(Error::invalid("lncc", format!("sigma must be positive, got {sigma}")));
    }
    let mi = i.gaussian_blur(sigma)?;
    let mj = j.gaussian_blur(sigma)?;
    let vi = i.square()?.gaussian_blur(sigma)?.sub(&mi.square()?)?.add_scalar(LNCC_EPS)?;
    let vj = j.square()?.gaussian_blur(sigma)?.sub(&mj.square()?)?.add_scalar(LNCC_EPS)?;
    let cov = i.mul(j)?.gaussian_blur(sigma)?.sub(&mi.mul(&mj)?)?;
    cov.div(&vi.mul(&vj)?.sqrt()?)?.mean()
}

/// Bending energy of a velocity grid `[h,w,2]` given in normalized units.
///
/// The field is converted to pixel units and differentiated with unit
/// spacing. Per pixel the energy is `Σ_c Σ_ab (∂²v_c/∂x_a∂x_b)²` (mixed term
/// twice); the result is the mean over interior pixels.
pub fn bending_energy<'t>(v: &Var<'t>) -> Result<Var<'t>> {
    let s = v.shape();
    if s.len() != 3 || s[2] != 2 {
        return Err(Error::shape("bending_energy", &[s]));
    }
    let (h, w) = (s[0], s[1]);
    if h < 3 || w < 3 {
        return Err(Error::invalid("bending_energy", format!("grid {h}x{w} is smaller than 3x3")));
    }
    let to_px = v.tape().constant(Tensor::from_fn(&[h, w, 2], |k| if k % 2 == 0 { w as f64 } else { h as f64 }));
    let u = v.mul(&to_px)?.permute(&[2, 0, 1])?;
    let (ih, iw) = (h - 2, w - 2);
    let win = |dy: usize, dx: usize| -> Result<Var<'t>> { u.slice(1, dy, ih)?.slice(2, dx, iw) };
    let center = win(1, 1)?.scale(2.0)?;
    let dxx = win(1, 2)?.add(&win(1, 0)?)?.sub(&center)?;
    let dyy = win(2, 1)?.add(&win(0, 1)?)?.sub(&center)?;
    let dxy = win(2, 2)?.sub(&win(2, 0)?)?.sub(&win(0, 2)?)?.add(&win(0, 0)?)?.scale(0.25)?;
    let total = dxx.square()?.add(&dyy.square()?)?.add(&dxy.square()?.scale(2.0)?)?.sum()?;
    total.scale(1.0 / (ih * iw) as f64)
}

/// Mean squared intensity difference.
pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("mse", &[a.shape(), b.shape()]));
    }
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64)
}
