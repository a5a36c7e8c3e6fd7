//! Raw numeric kernels shared by the primitive forward and adjoint rules.

/// `c = a(m×k) · b(k×n)`, with optional transposition of either operand.
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slices cover exactly the strided extents described above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[inline]
fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Geometry of a same-padded 2D convolution with replicate edges.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        self.h.div_ceil(self.stride)
    }
    pub fn out_w(&self) -> usize {
        self.w.div_ceil(self.stride)
    }
    pub fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }
    pub fn cols(&self) -> usize {
        self.out_h() * self.out_w()
    }

    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> (usize, usize) {
        let pad = (self.k / 2) as isize;
        let y = (oy * self.stride) as isize + ky as isize - pad;
        let x = (ox * self.stride) as isize + kx as isize - pad;
        (clamp_index(y, self.h), clamp_index(x, self.w))
    }

    pub fn im2col(&self, input: &[f64]) -> Vec<f64> {
        let (oh, ow, k) = (self.out_h(), self.out_w(), self.k);
        let mut cols = vec![0.0; self.rows() * self.cols()];
        for ci in 0..self.cin {
            let plane = &input[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let (y, x) = self.source(oy, ox, ky, kx);
                            dst[oy * ow + ox] = plane[y * self.w + x];
                        }
                    }
                }
            }
        }
        cols
    }

    pub fn col2im(&self, cols: &[f64], grad_in: &mut [f64]) {
        let (oh, ow, k) = (self.out_h(), self.out_w(), self.k);
        for ci in 0..self.cin {
            let plane = &mut grad_in[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let (y, x) = self.source(oy, ox, ky, kx);
                            plane[y * self.w + x] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Normalized Gaussian taps truncated at `ceil(3σ)`.
pub(crate) fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    taps
}

/// One separable blur pass along the row (`along_w`) or column direction of
/// each `h×w` plane, with replicate boundaries.
pub(crate) fn blur_pass(input: &[f64], planes: usize, h: usize, w: usize, taps: &[f64], along_w: bool) -> Vec<f64> {
    let r = (taps.len() / 2) as isize;
    let mut out = vec![0.0; input.len()];
    for p in 0..planes {
        let src = &input[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (t, &wt) in taps.iter().enumerate() {
                    let d = t as isize - r;
                    let v = if along_w {
                        src[y * w + clamp_index(x as isize + d, w)]
                    } else {
                        src[clamp_index(y as isize + d, h) * w + x]
                    };
                    acc += wt * v;
                }
                dst[y * w + x] = acc;
            }
        }
    }
    out
}

/// Adjoint of [`blur_pass`].
pub(crate) fn blur_pass_adjoint(grad: &[f64], planes: usize, h: usize, w: usize, taps: &[f64], along_w: bool) -> Vec<f64> {
    let r = (taps.len() / 2) as isize;
    let mut out = vec![0.0; grad.len()];
    for p in 0..planes {
        let src = &grad[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let g = src[y * w + x];
                if g == 0.0 {
                    continue;
                }
                for (t, &wt) in taps.iter().enumerate() {
                    let d = t as isize - r;
                    let idx = if along_w {
                        y * w + clamp_index(x as isize + d, w)
                    } else {
                        clamp_index(y as isize + d, h) * w + x
                    };
                    dst[idx] += wt * g;
                }
            }
        }
    }
    out
}

/// Bilinear lookup footprint of one normalized sample point.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Bilinear {
    pub i00: usize,
    pub i01: usize,
    pub i10: usize,
    pub i11: usize,
    pub fx: f64,
    pub fy: f64,
    /// d(pixel x)/d(normalized x), zero when the coordinate was clamped.
    pub dpx: f64,
    pub dpy: f64,
}

impl Bilinear {
    /// Pixel centers sit at `(j + 0.5) / w`; coordinates outside the
    /// image are clamped to the outermost centers.
    pub fn locate(x: f64, y: f64, h: usize, w: usize) -> Self {
        let (px, dpx) = clamp_coord(snap(x * w as f64 - 0.5), w, w as f64);
        let (py, dpy) = clamp_coord(snap(y * h as f64 - 0.5), h, h as f64);
        let x0 = (px.floor() as usize).min(w - 1);
        let y0 = (py.floor() as usize).min(h - 1);
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        Self {
            i00: y0 * w + x0,
            i01: y0 * w + x1,
            i10: y1 * w + x0,
            i11: y1 * w + x1,
            fx: px - x0 as f64,
            fy: py - y0 as f64,
            dpx,
            dpy,
        }
    }

    #[inline]
    pub fn weights(&self) -> [f64; 4] {
        let (fx, fy) = (self.fx, self.fy);
        [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy]
    }

    #[inline]
    pub fn indices(&self) -> [usize; 4] {
        [self.i00, self.i01, self.i10, self.i11]
    }
}

fn clamp_coord(p: f64, n: usize, scale: f64) -> (f64, f64) {
    let hi = (n - 1) as f64;
    if p < 0.0 {
        (0.0, 0.0)
    } else if p > hi {
        (hi, 0.0)
    } else {
        (p, scale)
    }
}

/// Rounds pixel positions within roundoff of a pixel center onto it, so that
/// sampling at identity coordinates reproduces the image exactly.
#[inline]
fn snap(p: f64) -> f64 {
    let r = p.round();
    if (p - r).abs() < 1e-10 {
        r
    } else {
        p
    }
}
