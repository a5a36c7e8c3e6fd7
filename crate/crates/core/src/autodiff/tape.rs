use std::cell::RefCell;
use std::fmt;

use serde_json::Value;

use super::primitive::{PadMode, Primitive, DEFAULT_LEAKY_SLOPE};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub type NodeId = usize;

struct Node {
    op: Option<Primitive>,
    parents: Vec<NodeId>,
    value: Tensor,
}

/// Append-only record of a forward computation.
///
/// Parents always precede children, so reverse append order is a valid
/// reverse topological order. A tape is single-threaded; independent
/// tapes share nothing.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.len()).finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Option<Primitive>, parents: Vec<NodeId>, value: Tensor) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            op,
            parents,
            value: value.clone(),
        });
        Var { tape: self, id, value }
    }

    /// Records a leaf (parameter, input or constant).
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(None, Vec::new(), value)
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.leaf(Tensor::scalar(value))
    }

    /// Evaluates `prim` on `inputs` and records the result.
    pub fn apply<'t>(&'t self, prim: Primitive, inputs: &[&Var<'t>]) -> Result<Var<'t>> {
        for v in inputs {
            debug_assert!(std::ptr::eq(v.tape, self), "variable from a different tape");
        }
        let values: Vec<&Tensor> = inputs.iter().map(|v| &v.value).collect();
        let out = prim.forward(&values)?;
        Ok(self.push(Some(prim), inputs.iter().map(|v| v.id).collect(), out))
    }

    /// Dynamic dispatch by primitive name, e.g. `("conv2d", {"stride": 1})`.
    pub fn primitive_forward<'t>(&'t self, kind: &str, inputs: &[&Var<'t>], attrs: &Value) -> Result<Var<'t>> {
        self.apply(Primitive::from_kind(kind, attrs)?, inputs)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: &Var<'_>) -> Result<Gradients> {
        if loss.value.len() != 1 {
            return Err(Error::NonScalarLoss(loss.value.shape().to_vec()));
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            let Some(op) = &node.op else { continue };
            let Some(g) = grads[id].as_ref() else { continue };
            let inputs: Vec<&Tensor> = node.parents.iter().map(|&p| &nodes[p].value).collect();
            let parent_grads = op.backward(&inputs, &node.value, g);
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                match &mut grads[p] {
                    Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        let grads = grads
            .into_iter()
            .zip(nodes.iter())
            .map(|(g, n)| g.map(|g| Tensor::from_parts(n.value.shape().to_vec(), g)))
            .collect();
        Ok(Gradients { grads })
    }
}

/// Gradients of one loss with respect to every node of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `var`; zeros if the loss does not depend on it.
    pub fn wrt(&self, var: &Var<'_>) -> Tensor {
        self.by_id(var.id).unwrap_or_else(|| Tensor::zeros(var.value.shape()))
    }

    pub fn by_id(&self, id: NodeId) -> Option<Tensor> {
        self.grads.get(id).and_then(|g| g.clone())
    }
}

/// A tensor value recorded on a [`Tape`].
#[derive(Clone)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: NodeId,
    value: Tensor,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("shape", &self.value.shape()).finish()
    }
}

macro_rules! binary {
    ($($name:ident => $prim:expr),* $(,)?) => {
        $(pub fn $name(&self, other: &Var<'t>) -> Result<Var<'t>> {
            self.tape.apply($prim, &[self, other])
        })*
    };
}

macro_rules! unary {
    ($($name:ident => $prim:expr),* $(,)?) => {
        $(pub fn $name(&self) -> Result<Var<'t>> {
            self.tape.apply($prim, &[self])
        })*
    };
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn data(&self) -> &[f64] {
        self.value.data()
    }

    pub fn item(&self) -> f64 {
        self.value.item()
    }

    binary! {
        add => Primitive::Add,
        sub => Primitive::Sub,
        mul => Primitive::Mul,
        div => Primitive::Div,
        matmul => Primitive::MatMul,
    }

    unary! {
        square => Primitive::Square,
        sqrt => Primitive::Sqrt,
        exp => Primitive::Exp,
        tanh => Primitive::Tanh,
        sum => Primitive::Sum { axis: None },
        mean => Primitive::Mean { axis: None },
        avg_pool2 => Primitive::AvgPool2,
        upsample2 => Primitive::Upsample2,
    }

    pub fn scale(&self, factor: f64) -> Result<Var<'t>> {
        self.tape.apply(Primitive::ScalarMul(factor), &[self])
    }

    pub fn neg(&self) -> Result<Var<'t>> {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, offset: f64) -> Result<Var<'t>> {
        self.tape.apply(Primitive::AddScalar(offset), &[self])
    }

    pub fn sum_axis(&self, axis: usize) -> Result<Var<'t>> {
        self.tape.apply(Primitive::Sum { axis: Some(axis) }, &[self])
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Var<'t>> {
        self.tape.apply(Primitive::Mean { axis: Some(axis) }, &[self])
    }

    pub fn leaky_relu(&self) -> Result<Var<'t>> {
        self.tape.apply(Primitive::LeakyRelu { slope: DEFAULT_LEAKY_SLOPE }, &[self])
    }

    pub fn conv2d(&self, weight: &Var<'t>, bias: Option<&Var<'t>>, stride: usize) -> Result<Var<'t>> {
        let prim = Primitive::Conv2d { stride };
        match bias {
            Some(b) => self.tape.apply(prim, &[self, weight, b]),
            None => self.tape.apply(prim, &[self, weight]),
        }
    }

    pub fn transpose(&self) -> Result<Var<'t>> {
        self.permute(&[1, 0])
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Var<'t>> {
        self.tape.apply(Primitive::Transpose { perm: perm.to_vec() }, &[self])
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        self.tape.apply(Primitive::Reshape { shape: shape.to_vec() }, &[self])
    }

    pub fn concat(parts: &[&Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        first.tape.apply(Primitive::Concat { axis }, parts)
    }

    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        self.tape.apply(Primitive::Slice { axis, start, len }, &[self])
    }

    pub fn pad(&self, before: &[usize], after: &[usize], mode: PadMode) -> Result<Var<'t>> {
        self.tape.apply(
            Primitive::Pad {
                before: before.to_vec(),
                after: after.to_vec(),
                mode,
            },
            &[self],
        )
    }

    pub fn gaussian_blur(&self, sigma: f64) -> Result<Var<'t>> {
        self.tape.apply(Primitive::GaussianBlur { sigma }, &[self])
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Var<'t>> {
        self.tape.apply(Primitive::Clamp { lo, hi }, &[self])
    }

    /// Bilinear sampling of this `[h,w]`/`[h,w,c]` image at normalized
    /// coordinates `[..,2]`, ordered `(x, y)` = (column, row).
    pub fn grid_sample(&self, coords: &Var<'t>) -> Result<Var<'t>> {
        self.tape.apply(Primitive::GridSample, &[self, coords])
    }
}
