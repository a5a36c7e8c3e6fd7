use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BoundParams, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    /// Four stride-2 convolutions (16/32/64/128), global average pool and a
    /// dense head. Emits a flat vector.
    ConvMatrixNet,
    /// Three-level encoder-decoder with skips (16/32/64). Emits a 2-channel
    /// grid at input resolution.
    SmallUnet,
}

const KERNEL: usize = 3;
const CMN_CHANNELS: [usize; 4] = [16, 32, 64, 128];
const INPUT_CHANNELS: usize = 2;

/// Output shape of a backbone: `[out_dim]` for matrix nets, `[h,w,2]` for
/// U-Nets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackboneOutput {
    Vector(usize),
    Grid,
}

fn conv_weight(rng: &mut impl Rng, cout: usize, cin: usize) -> Tensor {
    let bound = (6.0 / (cin * KERNEL * KERNEL) as f64).sqrt();
    Tensor::from_fn(&[cout, cin, KERNEL, KERNEL], |_| rng.gen_range(-bound..bound))
}

fn add_conv(store: &mut ParamStore, rng: &mut impl Rng, name: &str, cout: usize, cin: usize, zero: bool) -> Result<()> {
    let w = if zero { Tensor::zeros(&[cout, cin, KERNEL, KERNEL]) } else { conv_weight(rng, cout, cin) };
    store.insert(format!("{name}.weight"), w)?;
    store.insert(format!("{name}.bias"), Tensor::zeros(&[cout]))
}

/// Registers the parameters of one backbone under `prefix`. The output
/// head is zero so an untrained backbone emits exactly zero.
pub fn init_backbone(store: &mut ParamStore, rng: &mut impl Rng, prefix: &str, kind: BackboneKind, out: BackboneOutput) -> Result<()> {
    match (kind, out) {
        (BackboneKind::ConvMatrixNet, BackboneOutput::Vector(n)) => {
            let mut cin = INPUT_CHANNELS;
            for (k, &c) in CMN_CHANNELS.iter().enumerate() {
                add_conv(store, rng, &format!("{prefix}.conv{}", k + 1), c, cin, false)?;
                cin = c;
            }
            store.insert(format!("{prefix}.head.weight"), Tensor::zeros(&[cin, n]))?;
            store.insert(format!("{prefix}.head.bias"), Tensor::zeros(&[1, n]))
        }
        (BackboneKind::SmallUnet, BackboneOutput::Grid) => {
            add_conv(store, rng, &format!("{prefix}.enc1"), 16, INPUT_CHANNELS, false)?;
            add_conv(store, rng, &format!("{prefix}.enc2"), 32, 16, false)?;
            add_conv(store, rng, &format!("{prefix}.enc3"), 64, 32, false)?;
            add_conv(store, rng, &format!("{prefix}.dec2"), 32, 64 + 32, false)?;
            add_conv(store, rng, &format!("{prefix}.dec1"), 16, 32 + 16, false)?;
            add_conv(store, rng, &format!("{prefix}.head"), 2, 16, true)
        }
        _ => Err(Error::Model(format!("backbone {kind:?} cannot produce {out:?}"))),
    }
}

fn conv<'t>(p: &BoundParams<'t>, name: &str, x: &Var<'t>, stride: usize) -> Result<Var<'t>> {
    x.conv2d(p.get(&format!("{name}.weight"))?, Some(p.get(&format!("{name}.bias"))?), stride)
}

/// Runs a backbone on a stacked pair `[2,h,w]`.
pub fn backbone_forward<'t>(p: &BoundParams<'t>, prefix: &str, kind: BackboneKind, input: &Var<'t>) -> Result<Var<'t>> {
    let s = input.shape();
    if s.len() != 3 || s[0] != INPUT_CHANNELS {
        return Err(Error::shape("backbone", &[s]));
    }
    match kind {
        BackboneKind::ConvMatrixNet => {
            let mut x = input.clone();
            for k in 1..=CMN_CHANNELS.len() {
                x = conv(p, &format!("{prefix}.conv{k}"), &x, 2)?.leaky_relu()?;
            }
            let c = x.shape()[0];
            let hw: usize = x.shape()[1..].iter().product();
            let pooled = x.reshape(&[c, hw])?.mean_axis(1)?.reshape(&[1, c])?;
            let w = p.get(&format!("{prefix}.head.weight"))?;
            let out = pooled.matmul(w)?.add(p.get(&format!("{prefix}.head.bias"))?)?;
            out.reshape(&[w.shape()[1]])
        }
        BackboneKind::SmallUnet => {
            if s[1] % 4 != 0 || s[2] % 4 != 0 {
                return Err(Error::invalid("small_unet", format!("extents {:?} must be multiples of 4", &s[1..])));
            }
            let e1 = conv(p, &format!("{prefix}.enc1"), input, 1)?.leaky_relu()?;
            let e2 = conv(p, &format!("{prefix}.enc2"), &e1, 2)?.leaky_relu()?;
            let e3 = conv(p, &format!("{prefix}.enc3"), &e2, 2)?.leaky_relu()?;
            let d2 = Var::concat(&[&e3.upsample2()?, &e2], 0)?;
            let d2 = conv(p, &format!("{prefix}.dec2"), &d2, 1)?.leaky_relu()?;
            let d1 = Var::concat(&[&d2.upsample2()?, &e1], 0)?;
            let d1 = conv(p, &format!("{prefix}.dec1"), &d1, 1)?.leaky_relu()?;
            conv(p, &format!("{prefix}.head"), &d1, 1)?.permute(&[1, 2, 0])
        }
    }
}
