//! Differentiable primitives and their vector-Jacobian products.
//!
//! Every VJP is written in terms of other primitives, so when a backward pass
//! runs with recording on, the gradients it returns are themselves graph
//! nodes and can be differentiated again.
//!
//! Non-smooth points (relu, leaky_relu, clamp) take the derivative of the
//! `<=` branch: relu'(0) = 0, leaky_relu'(0) = slope, and clamp passes
//! gradient on `lo < x <= hi`.

use std::rc::Rc;

use super::array::{self, Array};
use super::error::{shape_err, Result, TensorError};
use super::tape::Tensor;

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Add,
    Sub,
    Mul,
    Div,
    MatMul,
    Transpose,
    Conv2d,
    Conv2dInputGrad,
    Conv2dWeightGrad,
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
    Log,
    Exp,
    Sin,
    Cos,
    Clamp(f64, f64),
    Sum,
    Mean,
    SumTo(Vec<usize>),
    BroadcastTo(Vec<usize>),
    Reshape(Vec<usize>),
    Concat {
        axis: usize,
        sizes: Vec<usize>,
    },
    Slice {
        axis: usize,
        start: usize,
    },
    SlicePad {
        axis: usize,
        start: usize,
    },
    Dropout(Rc<Array>),
    Gather {
        idx: Rc<[Option<usize>]>,
        src_shape: Vec<usize>,
    },
    ScatterAdd(Rc<[Option<usize>]>),
    Softmax,
    SoftmaxCrossEntropy(Rc<[usize]>),
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::MatMul => "matmul",
            Op::Transpose => "transpose",
            Op::Conv2d => "conv2d",
            Op::Conv2dInputGrad => "conv2d_input_grad",
            Op::Conv2dWeightGrad => "conv2d_weight_grad",
            Op::Relu => "relu",
            Op::LeakyRelu(_) => "leaky_relu",
            Op::Tanh => "tanh",
            Op::Sigmoid => "sigmoid",
            Op::Log => "log",
            Op::Exp => "exp",
            Op::Sin => "sin",
            Op::Cos => "cos",
            Op::Clamp(..) => "clamp",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::SumTo(_) => "sum_to",
            Op::BroadcastTo(_) => "broadcast_to",
            Op::Reshape(_) => "reshape",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::SlicePad { .. } => "slice_pad",
            Op::Dropout(_) => "dropout",
            Op::Gather { .. } => "gather",
            Op::ScatterAdd(_) => "scatter_add",
            Op::Softmax => "softmax",
            Op::SoftmaxCrossEntropy(_) => "softmax_cross_entropy",
        }
    }
}

fn unary(x: &Tensor, op: Op, f: impl Fn(f64) -> f64) -> Result<Tensor> {
    let v = x.value().map(f);
    Tensor::record(v, op, &[x])
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        let v = array::binary(self.value(), other.value(), "add", |a, b| a + b)?;
        Tensor::record(v, Op::Add, &[self, other])
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        let v = array::binary(self.value(), other.value(), "sub", |a, b| a - b)?;
        Tensor::record(v, Op::Sub, &[self, other])
    }

    /// Elementwise product with numpy-style broadcasting.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        let v = array::binary(self.value(), other.value(), "mul", |a, b| a * b)?;
        Tensor::record(v, Op::Mul, &[self, other])
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        let v = array::binary(self.value(), other.value(), "div", |a, b| a / b)?;
        Tensor::record(v, Op::Div, &[self, other])
    }

    /// Multiplies by a constant scalar.
    pub fn scale(&self, c: f64) -> Result<Tensor> {
        self.mul(&Tensor::scalar(c))
    }

    pub fn add_scalar(&self, c: f64) -> Result<Tensor> {
        self.add(&Tensor::scalar(c))
    }

    pub fn neg(&self) -> Result<Tensor> {
        self.scale(-1.0)
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let v = array::matmul(self.value(), other.value())?;
        Tensor::record(v, Op::MatMul, &[self, other])
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let v = array::transpose(self.value())?;
        Tensor::record(v, Op::Transpose, &[self])
    }

    /// 3x3 convolution, stride 1, zero padding 1. Input (N,C,H,W), weight (O,C,3,3).
    pub fn conv2d(&self, weight: &Tensor) -> Result<Tensor> {
        let v = array::conv2d(self.value(), weight.value())?;
        Tensor::record(v, Op::Conv2d, &[self, weight])
    }

    fn conv2d_input_grad(grad: &Tensor, weight: &Tensor) -> Result<Tensor> {
        let v = array::conv2d_input_grad(grad.value(), weight.value())?;
        Tensor::record(v, Op::Conv2dInputGrad, &[grad, weight])
    }

    fn conv2d_weight_grad(input: &Tensor, grad: &Tensor) -> Result<Tensor> {
        let v = array::conv2d_weight_grad(input.value(), grad.value())?;
        Tensor::record(v, Op::Conv2dWeightGrad, &[input, grad])
    }

    pub fn relu(&self) -> Result<Tensor> {
        unary(self, Op::Relu, |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn leaky_relu(&self, slope: f64) -> Result<Tensor> {
        unary(self, Op::LeakyRelu(slope), |x| {
            if x > 0.0 {
                x
            } else {
                slope * x
            }
        })
    }

    pub fn tanh(&self) -> Result<Tensor> {
        unary(self, Op::Tanh, f64::tanh)
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        unary(self, Op::Sigmoid, |x| 1.0 / (1.0 + (-x).exp()))
    }

    pub fn log(&self) -> Result<Tensor> {
        unary(self, Op::Log, f64::ln)
    }

    pub fn exp(&self) -> Result<Tensor> {
        unary(self, Op::Exp, f64::exp)
    }

    pub fn sin(&self) -> Result<Tensor> {
        unary(self, Op::Sin, f64::sin)
    }

    pub fn cos(&self) -> Result<Tensor> {
        unary(self, Op::Cos, f64::cos)
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Tensor> {
        if !(lo <= hi) {
            return Err(TensorError::Invalid {
                op: "clamp",
                detail: format!("lo {} > hi {}", lo, hi),
            });
        }
        unary(self, Op::Clamp(lo, hi), |x| x.max(lo).min(hi))
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&self) -> Result<Tensor> {
        Tensor::record(Array::scalar(self.value().sum()), Op::Sum, &[self])
    }

    pub fn mean(&self) -> Result<Tensor> {
        let n = self.numel();
        if n == 0 {
            return Err(shape_err("mean", "empty tensor"));
        }
        Tensor::record(
            Array::scalar(self.value().sum() / n as f64),
            Op::Mean,
            &[self],
        )
    }

    /// Sums broadcast dimensions away so the result has `shape`.
    pub fn sum_to(&self, shape: &[usize]) -> Result<Tensor> {
        let v = array::sum_to(self.value(), shape)?;
        Tensor::record(v, Op::SumTo(self.shape().to_vec()), &[self])
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor> {
        let v = array::broadcast_to(self.value(), shape)?;
        Tensor::record(v, Op::BroadcastTo(self.shape().to_vec()), &[self])
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let v = self.value().reshape(shape)?;
        Tensor::record(v, Op::Reshape(self.shape().to_vec()), &[self])
    }

    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let arrays: Vec<&Array> = parts.iter().map(|t| t.value()).collect();
        let v = array::concat(&arrays, axis)?;
        let sizes = parts.iter().map(|t| t.shape()[axis]).collect();
        Tensor::record(v, Op::Concat { axis, sizes }, parts)
    }

    /// Elements `[start, end)` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Tensor> {
        let v = array::slice(self.value(), axis, start, end)?;
        Tensor::record(v, Op::Slice { axis, start }, &[self])
    }

    fn slice_pad(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let v = array::slice_pad(self.value(), axis, start, len)?;
        Tensor::record(v, Op::SlicePad { axis, start }, &[self])
    }

    /// Multiplies by an externally supplied mask (already scaled by 1/(1-p)).
    pub fn dropout(&self, mask: &Array) -> Result<Tensor> {
        if mask.shape() != self.shape() {
            return Err(shape_err(
                "dropout",
                format!("mask {:?} vs input {:?}", mask.shape(), self.shape()),
            ));
        }
        let v = array::binary(self.value(), mask, "dropout", |a, b| a * b)?;
        Tensor::record(v, Op::Dropout(Rc::new(mask.clone())), &[self])
    }

    /// `out[i] = self.flat[idx[i]]`; `None` entries read zero.
    pub fn gather(&self, idx: Rc<[Option<usize>]>, out_shape: &[usize]) -> Result<Tensor> {
        let v = array::gather(self.value(), &idx, out_shape)?;
        let src_shape = self.shape().to_vec();
        Tensor::record(v, Op::Gather { idx, src_shape }, &[self])
    }

    fn scatter_add(&self, idx: Rc<[Option<usize>]>, out_shape: &[usize]) -> Result<Tensor> {
        let v = array::scatter_add(self.value(), &idx, out_shape)?;
        Tensor::record(v, Op::ScatterAdd(idx), &[self])
    }

    /// Softmax over the last axis.
    pub fn softmax(&self) -> Result<Tensor> {
        let v = array::softmax(self.value())?;
        Tensor::record(v, Op::Softmax, &[self])
    }

    /// Mean cross-entropy of `self` (batch, classes) against integer labels.
    pub fn softmax_cross_entropy(&self, labels: &[usize]) -> Result<Tensor> {
        let v = array::softmax_cross_entropy(self.value(), labels)?;
        Tensor::record(
            Array::scalar(v),
            Op::SoftmaxCrossEntropy(labels.into()),
            &[self],
        )
    }
}

fn mask_like(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::constant(x.value().map(f))
}

/// Reduces a broadcast-op gradient back to the input's shape.
fn unbroadcast(g: Tensor, shape: &[usize]) -> Result<Tensor> {
    if g.shape() == shape {
        Ok(g)
    } else {
        g.sum_to(shape)
    }
}

/// Vector-Jacobian product of one recorded node. `needed[i]` says whether the
/// gradient of input `i` is wanted; unneeded slots return `None`.
pub(crate) fn vjp(
    op: &Op,
    inputs: &[Tensor],
    g: &Tensor,
    needed: &[bool],
) -> Result<Vec<Option<Tensor>>> {
    let want = |i: usize| needed.get(i).copied().unwrap_or(false);
    let mut out: Vec<Option<Tensor>> = vec![None; inputs.len()];
    match op {
        Op::Add => {
            for i in 0..2 {
                if want(i) {
                    out[i] = Some(unbroadcast(g.clone(), inputs[i].shape())?);
                }
            }
        }
        Op::Sub => {
            if want(0) {
                out[0] = Some(unbroadcast(g.clone(), inputs[0].shape())?);
            }
            if want(1) {
                out[1] = Some(unbroadcast(g.neg()?, inputs[1].shape())?);
            }
        }
        Op::Mul => {
            if want(0) {
                out[0] = Some(unbroadcast(g.mul(&inputs[1])?, inputs[0].shape())?);
            }
            if want(1) {
                out[1] = Some(unbroadcast(g.mul(&inputs[0])?, inputs[1].shape())?);
            }
        }
        Op::Div => {
            let (a, b) = (&inputs[0], &inputs[1]);
            if want(0) {
                out[0] = Some(unbroadcast(g.div(b)?, a.shape())?);
            }
            if want(1) {
                let gb = g.mul(a)?.div(&b.mul(b)?)?.neg()?;
                out[1] = Some(unbroadcast(gb, b.shape())?);
            }
        }
        Op::MatMul => {
            let (a, b) = (&inputs[0], &inputs[1]);
            if want(0) {
                out[0] = Some(g.matmul(&b.transpose()?)?);
            }
            if want(1) {
                out[1] = Some(a.transpose()?.matmul(g)?);
            }
        }
        Op::Transpose => {
            if want(0) {
                out[0] = Some(g.transpose()?);
            }
        }
        Op::Conv2d => {
            let (x, w) = (&inputs[0], &inputs[1]);
            if want(0) {
                out[0] = Some(Tensor::conv2d_input_grad(g, w)?);
            }
            if want(1) {
                out[1] = Some(Tensor::conv2d_weight_grad(x, g)?);
            }
        }
        Op::Conv2dInputGrad => {
            // inputs: (grad_out G, weight W); g has the shape of the conv input.
            let (gg, w) = (&inputs[0], &inputs[1]);
            if want(0) {
                out[0] = Some(g.conv2d(w)?);
            }
            if want(1) {
                out[1] = Some(Tensor::conv2d_weight_grad(g, gg)?);
            }
        }
        Op::Conv2dWeightGrad => {
            // inputs: (conv input X, grad_out G); g has the shape of the weight.
            let (x, gg) = (&inputs[0], &inputs[1]);
            if want(0) {
                out[0] = Some(Tensor::conv2d_input_grad(gg, g)?);
            }
            if want(1) {
                out[1] = Some(x.conv2d(g)?);
            }
        }
        Op::Relu => {
            if want(0) {
                out[0] = Some(g.mul(&mask_like(&inputs[0], |x| if x > 0.0 { 1.0 } else { 0.0 }))?);
            }
        }
        Op::LeakyRelu(slope) => {
            if want(0) {
                let s = *slope;
                out[0] = Some(g.mul(&mask_like(&inputs[0], |x| if x > 0.0 { 1.0 } else { s }))?);
            }
        }
        Op::Tanh => {
            if want(0) {
                let t = inputs[0].tanh()?;
                let d = t.mul(&t)?.neg()?.add_scalar(1.0)?;
                out[0] = Some(g.mul(&d)?);
            }
        }
        Op::Sigmoid => {
            if want(0) {
                let s = inputs[0].sigmoid()?;
                let d = s.mul(&s.neg()?.add_scalar(1.0)?)?;
                out[0] = Some(g.mul(&d)?);
            }
        }
        Op::Log => {
            if want(0) {
                out[0] = Some(g.div(&inputs[0])?);
            }
        }
        Op::Exp => {
            if want(0) {
                out[0] = Some(g.mul(&inputs[0].exp()?)?);
            }
        }
        Op::Sin => {
            if want(0) {
                out[0] = Some(g.mul(&inputs[0].cos()?)?);
            }
        }
        Op::Cos => {
            if want(0) {
                out[0] = Some(g.mul(&inputs[0].sin()?.neg()?)?);
            }
        }
        Op::Clamp(lo, hi) => {
            if want(0) {
                let (lo, hi) = (*lo, *hi);
                out[0] = Some(g.mul(&mask_like(&inputs[0], |x| {
                    if x > lo && x <= hi {
                        1.0
                    } else {
                        0.0
                    }
                }))?);
            }
        }
        Op::Sum => {
            if want(0) {
                out[0] = Some(g.broadcast_to(inputs[0].shape())?);
            }
        }
        Op::Mean => {
            if want(0) {
                let n = inputs[0].numel() as f64;
                out[0] = Some(g.scale(1.0 / n)?.broadcast_to(inputs[0].shape())?);
            }
        }
        Op::SumTo(src) => {
            if want(0) {
                out[0] = Some(g.broadcast_to(src)?);
            }
        }
        Op::BroadcastTo(src) => {
            if want(0) {
                out[0] = Some(g.sum_to(src)?);
            }
        }
        Op::Reshape(src) => {
            if want(0) {
                out[0] = Some(g.reshape(src)?);
            }
        }
        Op::Concat { axis, sizes } => {
            let mut start = 0;
            for (i, &len) in sizes.iter().enumerate() {
                if want(i) {
                    out[i] = Some(g.slice(*axis, start, start + len)?);
                }
                start += len;
            }
        }
        Op::Slice { axis, start, .. } => {
            if want(0) {
                let len = inputs[0].shape()[*axis];
                out[0] = Some(g.slice_pad(*axis, *start, len)?);
            }
        }
        Op::SlicePad { axis, start, .. } => {
            if want(0) {
                let len = inputs[0].shape()[*axis];
                out[0] = Some(g.slice(*axis, *start, *start + len)?);
            }
        }
        Op::Dropout(mask) => {
            if want(0) {
                out[0] = Some(g.dropout(mask)?);
            }
        }
        Op::Gather { idx, src_shape } => {
            if want(0) {
                out[0] = Some(g.scatter_add(idx.clone(), src_shape)?);
            }
        }
        Op::ScatterAdd(idx) => {
            if want(0) {
                out[0] = Some(g.gather(idx.clone(), inputs[0].shape())?);
            }
        }
        Op::Softmax => {
            if want(0) {
                // dx = s * (g - sum_last(g * s))
                let s = inputs[0].softmax()?;
                let shape = s.shape().to_vec();
                let mut row_shape = shape.clone();
                if let Some(last) = row_shape.last_mut() {
                    *last = 1;
                }
                let dot = g.mul(&s)?.sum_to(&row_shape)?;
                out[0] = Some(s.mul(&g.sub(&dot)?)?);
            }
        }
        Op::SoftmaxCrossEntropy(labels) => {
            if want(0) {
                let logits = &inputs[0];
                let (b, c) = (logits.shape()[0], logits.shape()[1]);
                let mut onehot = Array::zeros(&[b, c]);
                for (i, &y) in labels.iter().enumerate() {
                    onehot.data_mut()[i * c + y] = 1.0;
                }
                let diff = logits.softmax()?.sub(&Tensor::constant(onehot))?;
                out[0] = Some(diff.mul(&g.scale(1.0 / b as f64)?)?);
            }
        }
    }
    Ok(out)
}
