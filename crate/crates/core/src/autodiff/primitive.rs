//! Differentiable primitives: shape rules, forward kernels and exact
//! vector-Jacobian products.

use serde_json::Value;

use super::kernels::{blur_pass, blur_pass_adjoint, gaussian_kernel, gemm, Bilinear, ConvGeom};
use super::tensor::{numel, split_at_axis, Tensor};
use crate::error::{Error, Result};

/// Default negative slope for [`Primitive::LeakyRelu`].
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PadMode {
    Zero,
    Replicate,
}

/// Every operation the tape knows how to record and differentiate.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    Add,
    Sub,
    Mul,
    Div,
    ScalarMul(f64),
    AddScalar(f64),
    MatMul,
    /// `[cin,h,w] ⊛ [cout,cin,k,k] (+ [cout])`, same padding, replicate edges.
    Conv2d { stride: usize },
    Transpose { perm: Vec<usize> },
    Reshape { shape: Vec<usize> },
    Concat { axis: usize },
    Slice { axis: usize, start: usize, len: usize },
    Sum { axis: Option<usize> },
    Mean { axis: Option<usize> },
    Square,
    Sqrt,
    Exp,
    Tanh,
    LeakyRelu { slope: f64 },
    /// 2×2 average pooling over the last two axes.
    AvgPool2,
    /// Nearest-neighbour 2× upsampling over the last two axes.
    Upsample2,
    Pad { before: Vec<usize>, after: Vec<usize>, mode: PadMode },
    /// Separable Gaussian over the last two axes, truncated at 3σ.
    GaussianBlur { sigma: f64 },
    Clamp { lo: f64, hi: f64 },
    /// Bilinear lookup of an `[h,w]` or `[h,w,c]` image at normalized
    /// `[..,2]` coordinates.
    GridSample,
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Div => "div",
            Primitive::ScalarMul(_) => "scalar_mul",
            Primitive::AddScalar(_) => "add_scalar",
            Primitive::MatMul => "matmul",
            Primitive::Conv2d { .. } => "conv2d",
            Primitive::Transpose { .. } => "transpose",
            Primitive::Reshape { .. } => "reshape",
            Primitive::Concat { .. } => "concat",
            Primitive::Slice { .. } => "slice",
            Primitive::Sum { .. } => "sum",
            Primitive::Mean { .. } => "mean",
            Primitive::Square => "square",
            Primitive::Sqrt => "sqrt",
            Primitive::Exp => "exp_elementwise",
            Primitive::Tanh => "tanh",
            Primitive::LeakyRelu { .. } => "leaky_relu",
            Primitive::AvgPool2 => "avg_pool2",
            Primitive::Upsample2 => "upsample2",
            Primitive::Pad { .. } => "pad",
            Primitive::GaussianBlur { .. } => "gaussian_blur",
            Primitive::Clamp { .. } => "clamp",
            Primitive::GridSample => "grid_sample",
        }
    }

    /// Builds a primitive from its kind name and a JSON object of static
    /// attributes, e.g. `("conv2d", {"stride": 2})`.
    pub fn from_kind(kind: &str, attrs: &Value) -> Result<Self> {
        let f = |key: &str| -> Result<f64> {
            attrs
                .get(key)
                .and_then(Value::as_f64)
                .ok_or_else(|| Error::invalid("primitive", format!("{kind}: missing numeric attribute `{key}`")))
        };
        let u = |key: &str| -> Result<usize> { Ok(f(key)? as usize) };
        let opt_axis = || attrs.get("axis").and_then(Value::as_u64).map(|a| a as usize);
        let list = |key: &str| -> Result<Vec<usize>> {
            attrs
                .get(key)
                .and_then(Value::as_array)
                .map(|a| a.iter().filter_map(Value::as_u64).map(|v| v as usize).collect())
                .ok_or_else(|| Error::invalid("primitive", format!("{kind}: missing list attribute `{key}`")))
        };
        Ok(match kind {
            "add" => Primitive::Add,
            "sub" => Primitive::Sub,
            "mul" => Primitive::Mul,
            "div" => Primitive::Div,
            "scalar_mul" => Primitive::ScalarMul(f("factor")?),
            "add_scalar" => Primitive::AddScalar(f("offset")?),
            "matmul" => Primitive::MatMul,
            "conv2d" => Primitive::Conv2d { stride: u("stride")? },
            "transpose" => Primitive::Transpose {
                perm: list("perm").unwrap_or_else(|_| vec![1, 0]),
            },
            "reshape" => Primitive::Reshape { shape: list("shape")? },
            "concat" => Primitive::Concat { axis: u("axis")? },
            "slice" => Primitive::Slice {
                axis: u("axis")?,
                start: u("start")?,
                len: u("len")?,
            },
            "sum" => Primitive::Sum { axis: opt_axis() },
            "mean" => Primitive::Mean { axis: opt_axis() },
            "square" => Primitive::Square,
            "sqrt" => Primitive::Sqrt,
            "exp_elementwise" | "exp" => Primitive::Exp,
            "tanh" => Primitive::Tanh,
            "leaky_relu" => Primitive::LeakyRelu {
                slope: f("slope").unwrap_or(DEFAULT_LEAKY_SLOPE),
            },
            "avg_pool2" => Primitive::AvgPool2,
            "upsample2" => Primitive::Upsample2,
            "pad" => Primitive::Pad {
                before: list("before")?,
                after: list("after")?,
                mode: match attrs.get("mode").and_then(Value::as_str) {
                    Some("replicate") => PadMode::Replicate,
                    _ => PadMode::Zero,
                },
            },
            "gaussian_blur" => Primitive::GaussianBlur { sigma: f("sigma")? },
            "clamp" => Primitive::Clamp {
                lo: f("lo")?,
                hi: f("hi")?,
            },
            "grid_sample" => Primitive::GridSample,
            other => return Err(Error::UnknownPrimitive(other.to_string())),
        })
    }

    fn check_arity(&self, n: usize) -> Result<()> {
        let ok = match self {
            Primitive::Add | Primitive::Sub | Primitive::Mul | Primitive::Div | Primitive::MatMul | Primitive::GridSample => n == 2,
            Primitive::Conv2d { .. } => n == 2 || n == 3,
            Primitive::Concat { .. } => n >= 1,
            _ => n == 1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(self.name(), format!("wrong number of inputs: {n}")))
        }
    }

    pub(crate) fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        self.check_arity(inputs.len())?;
        let x = inputs[0];
        let name = self.name();
        match self {
            Primitive::Add | Primitive::Sub | Primitive::Mul | Primitive::Div => {
                let y = inputs[1];
                if x.shape() != y.shape() {
                    return Err(Error::shape(name, &[x.shape(), y.shape()]));
                }
                let f: fn(f64, f64) -> f64 = match self {
                    Primitive::Add => |a, b| a + b,
                    Primitive::Sub => |a, b| a - b,
                    Primitive::Mul => |a, b| a * b,
                    _ => |a, b| a / b,
                };
                let data = x.data().iter().zip(y.data()).map(|(&a, &b)| f(a, b)).collect();
                Ok(Tensor::from_parts(x.shape().to_vec(), data))
            }
            Primitive::ScalarMul(c) => Ok(x.map(|v| v * c)),
            Primitive::AddScalar(c) => Ok(x.map(|v| v + c)),
            Primitive::MatMul => {
                let y = inputs[1];
                let (m, k, n) = matmul_dims(x.shape(), y.shape())?;
                let mut out = vec![0.0; m * n];
                gemm(m, k, n, x.data(), false, y.data(), false, &mut out, false);
                Ok(Tensor::from_parts(vec![m, n], out))
            }
            Primitive::Conv2d { stride } => {
                let (geom, cout) = conv_geom(*stride, inputs)?;
                let cols = geom.im2col(x.data());
                let p = geom.cols();
                let mut out = vec![0.0; cout * p];
                if let Some(bias) = inputs.get(2) {
                    for (co, chunk) in out.chunks_mut(p).enumerate() {
                        chunk.fill(bias.data()[co]);
                    }
                }
                gemm(cout, geom.rows(), p, inputs[1].data(), false, &cols, false, &mut out, true);
                Ok(Tensor::from_parts(vec![cout, geom.out_h(), geom.out_w()], out))
            }
            Primitive::Transpose { perm } => {
                check_perm(perm, x.shape())?;
                let (shape, data) = permute(x.shape(), x.data(), perm);
                Ok(Tensor::from_parts(shape, data))
            }
            Primitive::Reshape { shape } => {
                if shape.is_empty() || shape.contains(&0) || numel(shape) != x.len() {
                    return Err(Error::shape(name, &[x.shape(), shape]));
                }
                x.reshaped(shape)
            }
            Primitive::Concat { axis } => {
                let axis = *axis;
                let first = x.shape();
                if axis >= first.len() {
                    return Err(Error::shape(name, &inputs.iter().map(|t| t.shape()).collect::<Vec<_>>()));
                }
                for t in inputs {
                    let s = t.shape();
                    let ok = s.len() == first.len() && s.iter().zip(first).enumerate().all(|(i, (a, b))| i == axis || a == b);
                    if !ok {
                        return Err(Error::shape(name, &inputs.iter().map(|t| t.shape()).collect::<Vec<_>>()));
                    }
                }
                let (outer, _, inner) = split_at_axis(first, axis);
                let total: usize = inputs.iter().map(|t| t.shape()[axis]).sum();
                let mut data = Vec::with_capacity(outer * total * inner);
                for o in 0..outer {
                    for t in inputs {
                        let a = t.shape()[axis];
                        data.extend_from_slice(&t.data()[o * a * inner..(o + 1) * a * inner]);
                    }
                }
                let mut shape = first.to_vec();
                shape[axis] = total;
                Ok(Tensor::from_parts(shape, data))
            }
            Primitive::Slice { axis, start, len } => {
                let s = x.shape();
                if *axis >= s.len() || *len == 0 || start + len > s[*axis] {
                    return Err(Error::invalid(name, format!("slice axis {axis} [{start}, {}) of shape {s:?}", start + len)));
                }
                let (outer, a, inner) = split_at_axis(s, *axis);
                let mut data = Vec::with_capacity(outer * len * inner);
                for o in 0..outer {
                    let base = o * a * inner + start * inner;
                    data.extend_from_slice(&x.data()[base..base + len * inner]);
                }
                let mut shape = s.to_vec();
                shape[*axis] = *len;
                Ok(Tensor::from_parts(shape, data))
            }
            Primitive::Sum { axis } | Primitive::Mean { axis } => {
                let mean = matches!(self, Primitive::Mean { .. });
                match axis {
                    None => {
                        let s: f64 = x.data().iter().sum();
                        Ok(Tensor::scalar(if mean { s / x.len() as f64 } else { s }))
                    }
                    Some(axis) => {
                        let s = x.shape();
                        if *axis >= s.len() {
                            return Err(Error::invalid(name, format!("axis {axis} out of range for {s:?}")));
                        }
                        let (outer, a, inner) = split_at_axis(s, *axis);
                        let scale = if mean { 1.0 / a as f64 } else { 1.0 };
                        let mut data = vec![0.0; outer * inner];
                        for o in 0..outer {
                            for j in 0..a {
                                let src = &x.data()[(o * a + j) * inner..(o * a + j + 1) * inner];
                                for (d, v) in data[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                                    *d += v * scale;
                                }
                            }
                        }
                        Ok(Tensor::from_parts(reduced_shape(s, *axis), data))
                    }
                }
            }
            Primitive::Square => Ok(x.map(|v| v * v)),
            Primitive::Sqrt => Ok(x.map(f64::sqrt)),
            Primitive::Exp => Ok(x.map(f64::exp)),
            Primitive::Tanh => Ok(x.map(fast_tanh)),
            Primitive::LeakyRelu { slope } => Ok(x.map(|v| if v > 0.0 { v } else { slope * v })),
            Primitive::AvgPool2 => {
                let (planes, h, w) = planes_hw(name, x.shape())?;
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(Error::shape(name, &[x.shape()]));
                }
                let (oh, ow) = (h / 2, w / 2);
                let mut data = vec![0.0; planes * oh * ow];
                for p in 0..planes {
                    let src = &x.data()[p * h * w..];
                    for y in 0..oh {
                        for xx in 0..ow {
                            let i = 2 * y * w + 2 * xx;
                            data[p * oh * ow + y * ow + xx] = 0.25 * (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]);
                        }
                    }
                }
                Ok(Tensor::from_parts(with_hw(x.shape(), oh, ow), data))
            }
            Primitive::Upsample2 => {
                let (planes, h, w) = planes_hw(name, x.shape())?;
                let (oh, ow) = (2 * h, 2 * w);
                let mut data = vec![0.0; planes * oh * ow];
                for p in 0..planes {
                    for y in 0..oh {
                        for xx in 0..ow {
                            data[p * oh * ow + y * ow + xx] = x.data()[p * h * w + (y / 2) * w + xx / 2];
                        }
                    }
                }
                Ok(Tensor::from_parts(with_hw(x.shape(), oh, ow), data))
            }
            Primitive::Pad { before, after, mode } => {
                let s = x.shape();
                if before.len() != s.len() || after.len() != s.len() {
                    return Err(Error::invalid(name, format!("pad widths must have rank {}", s.len())));
                }
                let out_shape: Vec<usize> = s.iter().zip(before).zip(after).map(|((d, b), a)| d + b + a).collect();
                let mut data = vec![0.0; numel(&out_shape)];
                for_each_index(&out_shape, |idx, lin| {
                    if let Some(src) = pad_source(idx, s, before, *mode) {
                        data[lin] = x.data()[src];
                    }
                });
                Ok(Tensor::from_parts(out_shape, data))
            }
            Primitive::GaussianBlur { sigma } => {
                if !(*sigma > 0.0) {
                    return Err(Error::invalid(name, format!("sigma must be positive, got {sigma}")));
                }
                let (planes, h, w) = planes_hw(name, x.shape())?;
                let taps = gaussian_kernel(*sigma);
                let tmp = blur_pass(x.data(), planes, h, w, &taps, true);
                let out = blur_pass(&tmp, planes, h, w, &taps, false);
                Ok(Tensor::from_parts(x.shape().to_vec(), out))
            }
            Primitive::Clamp { lo, hi } => Ok(x.map(|v| v.clamp(*lo, *hi))),
            Primitive::GridSample => {
                let coords = inputs[1];
                let (h, w, c, npts) = sample_dims(x.shape(), coords.shape())?;
                if !coords.is_finite() {
                    return Err(Error::NonFinite("grid_sample coordinates"));
                }
                let img = x.data();
                let mut out = vec![0.0; npts * c];
                for (p, xy) in coords.data().chunks_exact(2).enumerate() {
                    let b = Bilinear::locate(xy[0], xy[1], h, w);
                    let wts = b.weights();
                    let idx = b.indices();
                    for ch in 0..c {
                        out[p * c + ch] = (0..4).map(|q| wts[q] * img[idx[q] * c + ch]).sum();
                    }
                }
                let mut shape = coords.shape()[..coords.shape().len() - 1].to_vec();
                if x.shape().len() == 3 {
                    shape.push(c);
                }
                if shape.is_empty() {
                    shape.push(1);
                }
                Ok(Tensor::from_parts(shape, out))
            }
        }
    }

    /// Vector-Jacobian product: gradient for each input given the gradient
    /// of the output.
    pub(crate) fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &[f64]) -> Vec<Vec<f64>> {
        let x = inputs[0];
        match self {
            Primitive::Add => vec![grad.to_vec(), grad.to_vec()],
            Primitive::Sub => vec![grad.to_vec(), grad.iter().map(|g| -g).collect()],
            Primitive::Mul => {
                let y = inputs[1];
                vec![
                    grad.iter().zip(y.data()).map(|(g, b)| g * b).collect(),
                    grad.iter().zip(x.data()).map(|(g, a)| g * a).collect(),
                ]
            }
            Primitive::Div => {
                let y = inputs[1];
                let gx: Vec<f64> = grad.iter().zip(y.data()).map(|(g, b)| g / b).collect();
                let gy = grad
                    .iter()
                    .zip(output.data())
                    .zip(y.data())
                    .map(|((g, q), b)| -g * q / b)
                    .collect();
                vec![gx, gy]
            }
            Primitive::ScalarMul(c) => vec![grad.iter().map(|g| g * c).collect()],
            Primitive::AddScalar(_) => vec![grad.to_vec()],
            Primitive::MatMul => {
                let y = inputs[1];
                let (m, k, n) = (x.shape()[0], x.shape()[1], y.shape()[1]);
                let mut gx = vec![0.0; m * k];
                let mut gy = vec![0.0; k * n];
                gemm(m, n, k, grad, false, y.data(), true, &mut gx, false);
                gemm(k, m, n, x.data(), true, grad, false, &mut gy, false);
                vec![gx, gy]
            }
            Primitive::Conv2d { stride } => {
                let (geom, cout) = conv_geom(*stride, inputs).expect("validated in forward");
                let weight = inputs[1];
                let p = geom.cols();
                let cols = geom.im2col(x.data());
                let mut gw = vec![0.0; cout * geom.rows()];
                gemm(cout, p, geom.rows(), grad, false, &cols, true, &mut gw, false);
                let mut gcols = vec![0.0; geom.rows() * p];
                gemm(geom.rows(), cout, p, weight.data(), true, grad, false, &mut gcols, false);
                let mut gx = vec![0.0; x.len()];
                geom.col2im(&gcols, &mut gx);
                let mut res = vec![gx, gw];
                if inputs.len() == 3 {
                    res.push(grad.chunks(p).map(|c| c.iter().sum()).collect());
                }
                res
            }
            Primitive::Transpose { perm } => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                vec![permute(output.shape(), grad, &inv).1]
            }
            Primitive::Reshape { .. } => vec![grad.to_vec()],
            Primitive::Concat { axis } => {
                let (outer, total, inner) = split_at_axis(output.shape(), *axis);
                let mut offset = 0;
                inputs
                    .iter()
                    .map(|t| {
                        let a = t.shape()[*axis];
                        let mut g = Vec::with_capacity(t.len());
                        for o in 0..outer {
                            let base = o * total * inner + offset * inner;
                            g.extend_from_slice(&grad[base..base + a * inner]);
                        }
                        offset += a;
                        g
                    })
                    .collect()
            }
            Primitive::Slice { axis, start, len } => {
                let (outer, a, inner) = split_at_axis(x.shape(), *axis);
                let mut g = vec![0.0; x.len()];
                for o in 0..outer {
                    let dst = o * a * inner + start * inner;
                    g[dst..dst + len * inner].copy_from_slice(&grad[o * len * inner..(o + 1) * len * inner]);
                }
                vec![g]
            }
            Primitive::Sum { axis } | Primitive::Mean { axis } => {
                let mean = matches!(self, Primitive::Mean { .. });
                match axis {
                    None => {
                        let g = grad[0] * if mean { 1.0 / x.len() as f64 } else { 1.0 };
                        vec![vec![g; x.len()]]
                    }
                    Some(axis) => {
                        let (outer, a, inner) = split_at_axis(x.shape(), *axis);
                        let scale = if mean { 1.0 / a as f64 } else { 1.0 };
                        let mut g = vec![0.0; x.len()];
                        for o in 0..outer {
                            for j in 0..a {
                                for i in 0..inner {
                                    g[(o * a + j) * inner + i] = grad[o * inner + i] * scale;
                                }
                            }
                        }
                        vec![g]
                    }
                }
            }
            Primitive::Square => vec![grad.iter().zip(x.data()).map(|(g, v)| 2.0 * g * v).collect()],
            Primitive::Sqrt => vec![grad.iter().zip(output.data()).map(|(g, r)| 0.5 * g / r).collect()],
            Primitive::Exp => vec![grad.iter().zip(output.data()).map(|(g, e)| g * e).collect()],
            Primitive::Tanh => vec![grad.iter().zip(output.data()).map(|(g, t)| g * (1.0 - t * t)).collect()],
            Primitive::LeakyRelu { slope } => vec![grad
                .iter()
                .zip(x.data())
                .map(|(g, v)| if *v > 0.0 { *g } else { g * slope })
                .collect()],
            Primitive::AvgPool2 => {
                let (planes, h, w) = planes_hw("avg_pool2", x.shape()).expect("validated");
                let (oh, ow) = (h / 2, w / 2);
                let mut g = vec![0.0; x.len()];
                for p in 0..planes {
                    for y in 0..h {
                        for xx in 0..w {
                            g[p * h * w + y * w + xx] = 0.25 * grad[p * oh * ow + (y / 2) * ow + xx / 2];
                        }
                    }
                }
                vec![g]
            }
            Primitive::Upsample2 => {
                let (planes, h, w) = planes_hw("upsample2", x.shape()).expect("validated");
                let (oh, ow) = (2 * h, 2 * w);
                let mut g = vec![0.0; x.len()];
                for p in 0..planes {
                    for y in 0..oh {
                        for xx in 0..ow {
                            g[p * h * w + (y / 2) * w + xx / 2] += grad[p * oh * ow + y * ow + xx];
                        }
                    }
                }
                vec![g]
            }
            Primitive::Pad { before, mode, .. } => {
                let mut g = vec![0.0; x.len()];
                for_each_index(output.shape(), |idx, lin| {
                    if let Some(src) = pad_source(idx, x.shape(), before, *mode) {
                        g[src] += grad[lin];
                    }
                });
                vec![g]
            }
            Primitive::GaussianBlur { sigma } => {
                let (planes, h, w) = planes_hw("gaussian_blur", x.shape()).expect("validated");
                let taps = gaussian_kernel(*sigma);
                let tmp = blur_pass_adjoint(grad, planes, h, w, &taps, false);
                vec![blur_pass_adjoint(&tmp, planes, h, w, &taps, true)]
            }
            Primitive::Clamp { lo, hi } => vec![grad
                .iter()
                .zip(x.data())
                .map(|(g, v)| if v > lo && v < hi { *g } else { 0.0 })
                .collect()],
            Primitive::GridSample => {
                let coords = inputs[1];
                let (h, w, c, _) = sample_dims(x.shape(), coords.shape()).expect("validated");
                let img = x.data();
                let mut gi = vec![0.0; x.len()];
                let mut gc = vec![0.0; coords.len()];
                for (p, xy) in coords.data().chunks_exact(2).enumerate() {
                    let b = Bilinear::locate(xy[0], xy[1], h, w);
                    let wts = b.weights();
                    let idx = b.indices();
                    let (fx, fy) = (b.fx, b.fy);
                    for ch in 0..c {
                        let g = grad[p * c + ch];
                        for q in 0..4 {
                            gi[idx[q] * c + ch] += wts[q] * g;
                        }
                        let v = |q: usize| img[idx[q] * c + ch];
                        let dx = (1.0 - fy) * (v(1) - v(0)) + fy * (v(3) - v(2));
                        let dy = (1.0 - fx) * (v(2) - v(0)) + fx * (v(3) - v(1));
                        gc[2 * p] += g * dx * b.dpx;
                        gc[2 * p + 1] += g * dy * b.dpy;
                    }
                }
                vec![gi, gc]
            }
        }
    }
}

fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize)> {
    if a.len() != 2 || b.len() != 2 || a[1] != b[0] {
        return Err(Error::shape("matmul", &[a, b]));
    }
    Ok((a[0], a[1], b[1]))
}

fn conv_geom(stride: usize, inputs: &[&Tensor]) -> Result<(ConvGeom, usize)> {
    let (x, w) = (inputs[0].shape(), inputs[1].shape());
    let bad = || {
        let mut shapes = vec![x, w];
        if let Some(b) = inputs.get(2) {
            shapes.push(b.shape());
        }
        Error::shape("conv2d", &shapes)
    };
    if stride != 1 && stride != 2 {
        return Err(Error::invalid("conv2d", format!("stride must be 1 or 2, got {stride}")));
    }
    if x.len() != 3 || w.len() != 4 || w[1] != x[0] || w[2] != w[3] || w[2] % 2 == 0 {
        return Err(bad());
    }
    if let Some(b) = inputs.get(2) {
        if b.shape() != [w[0]] {
            return Err(bad());
        }
    }
    Ok((
        ConvGeom {
            cin: x[0],
            h: x[1],
            w: x[2],
            k: w[2],
            stride,
        },
        w[0],
    ))
}

fn check_perm(perm: &[usize], shape: &[usize]) -> Result<()> {
    let mut seen = vec![false; shape.len()];
    let valid = perm.len() == shape.len()
        && perm.iter().all(|&p| {
            p < seen.len() && !std::mem::replace(&mut seen[p], true)
        });
    if valid {
        Ok(())
    } else {
        Err(Error::invalid("transpose", format!("permutation {perm:?} invalid for shape {shape:?}")))
    }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Output axis `i` is input axis `perm[i]`.
fn permute(shape: &[usize], data: &[f64], perm: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = vec![0.0; data.len()];
    for_each_index(&out_shape, |idx, lin| {
        let src: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
        out[lin] = data[src];
    });
    (out_shape, out)
}

fn for_each_index(shape: &[usize], mut f: impl FnMut(&[usize], usize)) {
    let n = numel(shape);
    let mut idx = vec![0usize; shape.len()];
    for lin in 0..n {
        f(&idx, lin);
        for ax in (0..shape.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
}

fn pad_source(idx: &[usize], shape: &[usize], before: &[usize], mode: PadMode) -> Option<usize> {
    let mut lin = 0;
    for ((&i, &d), &b) in idx.iter().zip(shape).zip(before) {
        let s = i as isize - b as isize;
        let s = if s < 0 || s >= d as isize {
            match mode {
                PadMode::Zero => return None,
                PadMode::Replicate => s.clamp(0, d as isize - 1),
            }
        } else {
            s
        };
        lin = lin * d + s as usize;
    }
    Some(lin)
}

fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s: Vec<usize> = shape.iter().enumerate().filter(|(i, _)| *i != axis).map(|(_, &d)| d).collect();
    if s.is_empty() {
        s.push(1);
    }
    s
}

fn planes_hw(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::shape(op, &[shape]));
    }
    let n = shape.len();
    Ok((shape[..n - 2].iter().product(), shape[n - 2], shape[n - 1]))
}

fn with_hw(shape: &[usize], h: usize, w: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    let n = s.len();
    s[n - 2] = h;
    s[n - 1] = w;
    s
}

fn sample_dims(image: &[usize], coords: &[usize]) -> Result<(usize, usize, usize, usize)> {
    let bad = || Error::shape("grid_sample", &[image, coords]);
    let c = match image.len() {
        2 => 1,
        3 => image[2],
        _ => return Err(bad()),
    };
    if coords.last() != Some(&2) {
        return Err(bad());
    }
    Ok((image[0], image[1], c, numel(coords) / 2))
}

/// `tanh` through a single `exp`; absolute error within a few ulps of 1.
fn fast_tanh(x: f64) -> f64 {
    let e = (-2.0 * x.abs()).exp();
    ((1.0 - e) / (1.0 + e)).copysign(x)
}
