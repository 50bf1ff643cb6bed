//! Reverse-mode differentiation over a linear operation tape.
//!
//! Forward calls record one node per primitive; [`Tape::backward`] replays the
//! record in reverse topological order (which is simply reverse creation
//! order) and accumulates gradients into the leaves. Only the primitives the
//! model needs are provided; there is no broadcasting beyond what the
//! convolution stack requires.
//!
//! Every forward result is checked for NaN/Inf before it is admitted to the
//! tape, so a non-finite value surfaces as an error at the operation that
//! produced it instead of as a poisoned loss many steps later.

use crate::error::{NcrfError, Result};
use crate::numerics::tensor::{ensure_same_shape, Scalar, Tensor};

/// Guard for cosine denominators, per the spec of `cosine_similarity`.
pub const COSINE_EPS: f64 = 1e-8;

/// Handle to a value on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug)]
enum Op<F> {
    Leaf { trainable: bool },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Neg(NodeId),
    ScaleConst(NodeId, F),
    SubFromConst(F, NodeId),
    Exp(NodeId),
    Relu(NodeId),
    LogSoftmax(NodeId),
    /// `vec * scalar` where `scalar` is a 1-element tensor on the tape.
    ScaleByScalar { vec: NodeId, scalar: NodeId },
    CosineSim(NodeId, NodeId),
    Conv2d {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        stride: usize,
        pad: usize,
    },
    /// 2x2 max pooling, stride 2. `argmax` caches the flat input index that
    /// won each output cell (first in raster order on ties).
    MaxPool2 { input: NodeId, argmax: Vec<u32> },
    GlobalAvgPool(NodeId),
    Linear { input: NodeId, weight: NodeId, bias: NodeId },
    SumAll(NodeId),
    Pick { input: NodeId, index: usize },
    LnFloor { input: NodeId, floor: F },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Recorded forward computation with enough structure to replay backward.
pub struct Tape<F: Scalar> {
    nodes: Vec<Node<F>>,
}

/// Gradients of a loss with respect to the tape's leaves.
///
/// A trainable leaf that the loss does not reach has an exactly-zero
/// gradient.
pub struct Gradients<F: Scalar> {
    grads: Vec<Option<Tensor<F>>>,
    shapes: Vec<Vec<usize>>,
}

impl<F: Scalar> Gradients<F> {
    /// Gradient w.r.t. the given node (zeros if the loss never reached it).
    pub fn wrt(&self, id: NodeId) -> Tensor<F> {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.shapes[id.0].clone()),
        }
    }
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Value produced by a node.
    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<F>, op: Op<F>, needs_grad: bool) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(NcrfError::NonFinite { op: op_name.into() });
        }
        self.nodes.push(Node { value, op, needs_grad });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Trainable leaf: participates in gradients.
    pub fn param(&mut self, value: Tensor<F>) -> Result<NodeId> {
        self.push("param", value, Op::Leaf { trainable: true }, true)
    }

    /// Constant leaf: inputs, labels, anything held fixed.
    pub fn constant(&mut self, value: Tensor<F>) -> Result<NodeId> {
        self.push("constant", value, Op::Leaf { trainable: false }, false)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        ensure_same_shape("add", self.value(a), self.value(b))?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        self.push("add", value, Op::Add(a, b), needs)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        ensure_same_shape("sub", self.value(a), self.value(b))?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x - y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        self.push("sub", value, Op::Sub(a, b), needs)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        ensure_same_shape("mul", self.value(a), self.value(b))?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        self.push("mul", value, Op::Mul(a, b), needs)
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).map(|v| -v);
        let needs = self.needs(a);
        self.push("neg", value, Op::Neg(a), needs)
    }

    pub fn scale_const(&mut self, a: NodeId, c: F) -> Result<NodeId> {
        let value = self.value(a).map(|v| v * c);
        let needs = self.needs(a);
        self.push("scale_const", value, Op::ScaleConst(a, c), needs)
    }

    /// `c - x`, elementwise.
    pub fn sub_from_const(&mut self, c: F, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).map(|v| c - v);
        let needs = self.needs(a);
        self.push("sub_from_const", value, Op::SubFromConst(c, a), needs)
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).map(|v| v.exp());
        let needs = self.needs(a);
        self.push("exp", value, Op::Exp(a), needs)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let zero = F::zero();
        let value = self.value(a).map(|v| if v > zero { v } else { zero });
        let needs = self.needs(a);
        self.push("relu", value, Op::Relu(a), needs)
    }

    /// Log-softmax of a 1-D tensor, computed with max subtraction.
    pub fn log_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.value(a);
        if t.shape().len() != 1 {
            return Err(NcrfError::shape("log_softmax", format!("want 1-D, got {:?}", t.shape())));
        }
        let value = Tensor::new(t.shape().to_vec(), log_softmax_slice(t.data()))?;
        let needs = self.needs(a);
        self.push("log_softmax", value, Op::LogSoftmax(a), needs)
    }

    /// Multiply every element of `vec` by the single element of `scalar`.
    pub fn scale_by_scalar(&mut self, vec: NodeId, scalar: NodeId) -> Result<NodeId> {
        if self.value(scalar).numel() != 1 {
            return Err(NcrfError::shape(
                "scale_by_scalar",
                format!("scalar operand has shape {:?}", self.value(scalar).shape()),
            ));
        }
        let s = self.value(scalar).item();
        let value = self.value(vec).map(|v| v * s);
        let needs = self.needs(vec) || self.needs(scalar);
        self.push("scale_by_scalar", value, Op::ScaleByScalar { vec, scalar }, needs)
    }

    /// Cosine similarity of two equal-length 1-D tensors; 1-element output.
    ///
    /// The denominator is guarded by `max(|a||b|, 1e-8)`; if either input is
    /// exactly zero the result is 0 with zero gradient and the degenerate
    /// case is logged.
    pub fn cosine_similarity(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 1 || ta.shape() != tb.shape() {
            return Err(NcrfError::shape(
                "cosine_similarity",
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let (dot, na2, nb2) = dot_and_norms(ta.data(), tb.data());
        let denom_raw = na2.sqrt() * nb2.sqrt();
        let c = if denom_raw == F::zero() {
            log::warn!("cosine_similarity: zero-norm input, returning 0 with zero gradient");
            F::zero()
        } else {
            dot / denom_raw.max(F::from_f64(COSINE_EPS))
        };
        let needs = self.needs(a) || self.needs(b);
        self.push("cosine_similarity", Tensor::scalar(c), Op::CosineSim(a, b), needs)
    }

    /// Cross-correlation of `input [C_in,H,W]` with `weight [C_out,C_in,k,k]`
    /// plus per-channel `bias [C_out]`, zero padding.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let (ti, tw, tb) = (self.value(input), self.value(weight), self.value(bias));
        let (c_in, h, w) = dims3("conv2d", ti)?;
        let ws = tw.shape();
        if ws.len() != 4 || ws[1] != c_in || ws[2] != ws[3] {
            return Err(NcrfError::shape(
                "conv2d",
                format!("weight {:?} incompatible with input {:?}", ws, ti.shape()),
            ));
        }
        let (c_out, k) = (ws[0], ws[2]);
        if k % 2 == 0 {
            return Err(NcrfError::shape("conv2d", format!("kernel size {k} must be odd")));
        }
        if tb.shape() != [c_out] {
            return Err(NcrfError::shape(
                "conv2d",
                format!("bias {:?}, want [{c_out}]", tb.shape()),
            ));
        }
        if stride == 0 || (h + 2 * pad) < k || (w + 2 * pad) < k {
            return Err(NcrfError::shape("conv2d", "kernel does not fit padded input"));
        }
        if (h + 2 * pad - k) % stride != 0 || (w + 2 * pad - k) % stride != 0 {
            return Err(NcrfError::shape(
                "conv2d",
                format!("output extent not integral for H={h} W={w} k={k} pad={pad} stride={stride}"),
            ));
        }
        let h_out = (h + 2 * pad - k) / stride + 1;
        let w_out = (w + 2 * pad - k) / stride + 1;
        let mut out = vec![F::zero(); c_out * h_out * w_out];
        conv2d_forward(
            ti.data(),
            tw.data(),
            tb.data(),
            &mut out,
            ConvDims { c_in, h, w, c_out, k, stride, pad, h_out, w_out },
        );
        let value = Tensor::new(vec![c_out, h_out, w_out], out)?;
        let needs = self.needs(input) || self.needs(weight) || self.needs(bias);
        self.push("conv2d", value, Op::Conv2d { input, weight, bias, stride, pad }, needs)
    }

    /// 2x2 max pooling with stride 2 over `[C,H,W]`; H and W must be even.
    pub fn max_pool2(&mut self, input: NodeId) -> Result<NodeId> {
        let ti = self.value(input);
        let (c, h, w) = dims3("max_pool2", ti)?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(NcrfError::shape("max_pool2", format!("H={h}, W={w} must be even")));
        }
        let (ho, wo) = (h / 2, w / 2);
        let mut out = vec![F::zero(); c * ho * wo];
        let mut argmax = vec![0u32; c * ho * wo];
        let data = ti.data();
        for ci in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best_idx = ci * h * w + (2 * oy) * w + 2 * ox;
                    let mut best = data[best_idx];
                    for (dy, dx) in [(0usize, 1usize), (1, 0), (1, 1)] {
                        let idx = ci * h * w + (2 * oy + dy) * w + 2 * ox + dx;
                        if data[idx] > best {
                            best = data[idx];
                            best_idx = idx;
                        }
                    }
                    out[ci * ho * wo + oy * wo + ox] = best;
                    argmax[ci * ho * wo + oy * wo + ox] = best_idx as u32;
                }
            }
        }
        let value = Tensor::new(vec![c, ho, wo], out)?;
        let needs = self.needs(input);
        self.push("max_pool2", value, Op::MaxPool2 { input, argmax }, needs)
    }

    /// Per-channel spatial mean: `[C,H,W] -> [C]`.
    pub fn global_avg_pool(&mut self, input: NodeId) -> Result<NodeId> {
        let ti = self.value(input);
        let (c, h, w) = dims3("global_avg_pool", ti)?;
        let inv = F::from_f64(1.0 / (h * w) as f64);
        let data = ti.data();
        let out: Vec<F> = (0..c)
            .map(|ci| data[ci * h * w..(ci + 1) * h * w].iter().copied().sum::<F>() * inv)
            .collect();
        let value = Tensor::new(vec![c], out)?;
        let needs = self.needs(input);
        self.push("global_avg_pool", value, Op::GlobalAvgPool(input), needs)
    }

    /// Affine map `weight [d_out,d_in] * input [d_in] + bias [d_out]`.
    pub fn linear(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let (ti, tw, tb) = (self.value(input), self.value(weight), self.value(bias));
        if ti.shape().len() != 1 || tw.shape().len() != 2 {
            return Err(NcrfError::shape(
                "linear",
                format!("input {:?}, weight {:?}", ti.shape(), tw.shape()),
            ));
        }
        let (d_out, d_in) = (tw.shape()[0], tw.shape()[1]);
        if ti.shape()[0] != d_in || tb.shape() != [d_out] {
            return Err(NcrfError::shape(
                "linear",
                format!(
                    "input {:?}, weight {:?}, bias {:?}",
                    ti.shape(),
                    tw.shape(),
                    tb.shape()
                ),
            ));
        }
        let x = ti.data();
        let out: Vec<F> = (0..d_out)
            .map(|o| dot_slices(&tw.data()[o * d_in..(o + 1) * d_in], x) + tb.data()[o])
            .collect();
        let value = Tensor::new(vec![d_out], out)?;
        let needs = self.needs(input) || self.needs(weight) || self.needs(bias);
        self.push("linear", value, Op::Linear { input, weight, bias }, needs)
    }

    /// Sum of all elements; 1-element output.
    pub fn sum_all(&mut self, input: NodeId) -> Result<NodeId> {
        let s: F = self.value(input).data().iter().copied().sum();
        let needs = self.needs(input);
        self.push("sum_all", Tensor::scalar(s), Op::SumAll(input), needs)
    }

    /// Select one element by flat index; 1-element output.
    pub fn pick(&mut self, input: NodeId, index: usize) -> Result<NodeId> {
        let ti = self.value(input);
        if index >= ti.numel() {
            return Err(NcrfError::shape(
                "pick",
                format!("index {index} out of range for {:?}", ti.shape()),
            ));
        }
        let value = Tensor::scalar(ti.data()[index]);
        let needs = self.needs(input);
        self.push("pick", value, Op::Pick { input, index }, needs)
    }

    /// `ln(max(x, floor))`, elementwise; `floor` must be positive.
    pub fn ln_floor(&mut self, input: NodeId, floor: F) -> Result<NodeId> {
        if floor <= F::zero() {
            return Err(NcrfError::Contract("ln_floor requires a positive floor".into()));
        }
        let value = self.value(input).map(|v| v.max(floor).ln());
        let needs = self.needs(input);
        self.push("ln_floor", value, Op::LnFloor { input, floor }, needs)
    }

    /// Reverse pass from a 1-element loss node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<F>> {
        if self.value(loss).numel() != 1 {
            return Err(NcrfError::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(F::one()));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad && !matches!(self.nodes[i].op, Op::Leaf { .. }) {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Leaf { trainable } => {
                    if *trainable {
                        grads[i] = Some(g); // keep: this is an output of backward
                    }
                }
                Op::Add(a, b) => {
                    self.accum(&mut grads, *a, g.data(), |u| u);
                    self.accum(&mut grads, *b, g.data(), |u| u);
                }
                Op::Sub(a, b) => {
                    self.accum(&mut grads, *a, g.data(), |u| u);
                    self.accum(&mut grads, *b, g.data(), |u| -u);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    self.accum_zip(&mut grads, *a, g.data(), vb, |u, o| u * o);
                    self.accum_zip(&mut grads, *b, g.data(), va, |u, o| u * o);
                }
                Op::Neg(a) => self.accum(&mut grads, *a, g.data(), |u| -u),
                Op::ScaleConst(a, c) => {
                    let c = *c;
                    self.accum(&mut grads, *a, g.data(), move |u| u * c);
                }
                Op::SubFromConst(_, a) => self.accum(&mut grads, *a, g.data(), |u| -u),
                Op::Exp(a) => {
                    let out = self.nodes[i].value.data();
                    self.accum_zip(&mut grads, *a, g.data(), out, |u, o| u * o);
                }
                Op::Relu(a) => {
                    let x = self.value(*a).data();
                    self.accum_zip(&mut grads, *a, g.data(), x, |u, xv| {
                        if xv > F::zero() {
                            u
                        } else {
                            F::zero()
                        }
                    });
                }
                Op::LogSoftmax(a) => {
                    if self.needs(*a) {
                        let out = self.nodes[i].value.data();
                        let gsum: F = g.data().iter().copied().sum();
                        let contrib: Vec<F> = g
                            .data()
                            .iter()
                            .zip(out)
                            .map(|(&u, &o)| u - o.exp() * gsum)
                            .collect();
                        self.accum(&mut grads, *a, &contrib, |u| u);
                    }
                }
                Op::ScaleByScalar { vec, scalar } => {
                    let s = self.value(*scalar).item();
                    self.accum(&mut grads, *vec, g.data(), move |u| u * s);
                    if self.needs(*scalar) {
                        let dot: F = g
                            .data()
                            .iter()
                            .zip(self.value(*vec).data())
                            .map(|(&u, &v)| u * v)
                            .sum();
                        self.accum(&mut grads, *scalar, &[dot], |u| u);
                    }
                }
                Op::CosineSim(a, b) => {
                    let u = g.item();
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    let (ga, gb) = cosine_backward(va, vb, u);
                    self.accum(&mut grads, *a, &ga, |x| x);
                    self.accum(&mut grads, *b, &gb, |x| x);
                }
                Op::Conv2d { input, weight, bias, stride, pad } => {
                    let ti = self.value(*input);
                    let tw = self.value(*weight);
                    let (c_in, h, w) = dims3("conv2d", ti).expect("validated at forward");
                    let (c_out, k) = (tw.shape()[0], tw.shape()[2]);
                    let (h_out, w_out) = (self.nodes[i].value.shape()[1], self.nodes[i].value.shape()[2]);
                    let dims = ConvDims { c_in, h, w, c_out, k, stride: *stride, pad: *pad, h_out, w_out };
                    if self.needs(*bias) {
                        let gb = conv2d_backward_bias(g.data(), &dims);
                        self.accum(&mut grads, *bias, &gb, |x| x);
                    }
                    if self.needs(*weight) {
                        let gw = conv2d_backward_weight(ti.data(), g.data(), &dims);
                        self.accum(&mut grads, *weight, &gw, |x| x);
                    }
                    if self.needs(*input) {
                        let gi = conv2d_backward_input(tw.data(), g.data(), &dims);
                        self.accum(&mut grads, *input, &gi, |x| x);
                    }
                }
                Op::MaxPool2 { input, argmax } => {
                    if self.needs(*input) {
                        let mut gi = vec![F::zero(); self.value(*input).numel()];
                        for (o, &src) in argmax.iter().enumerate() {
                            gi[src as usize] += g.data()[o];
                        }
                        self.accum(&mut grads, *input, &gi, |x| x);
                    }
                }
                Op::GlobalAvgPool(a) => {
                    if self.needs(*a) {
                        let (c, h, w) = dims3("global_avg_pool", self.value(*a)).expect("validated");
                        let inv = F::from_f64(1.0 / (h * w) as f64);
                        let mut gi = vec![F::zero(); c * h * w];
                        for ci in 0..c {
                            let gv = g.data()[ci] * inv;
                            for v in &mut gi[ci * h * w..(ci + 1) * h * w] {
                                *v += gv;
                            }
                        }
                        self.accum(&mut grads, *a, &gi, |x| x);
                    }
                }
                Op::Linear { input, weight, bias } => {
                    let tw = self.value(*weight);
                    let (d_out, d_in) = (tw.shape()[0], tw.shape()[1]);
                    let u = g.data();
                    if self.needs(*bias) {
                        self.accum(&mut grads, *bias, u, |x| x);
                    }
                    if self.needs(*weight) {
                        let x = self.value(*input).data();
                        let mut gw = vec![F::zero(); d_out * d_in];
                        for o in 0..d_out {
                            let uo = u[o];
                            for (gwv, &xv) in gw[o * d_in..(o + 1) * d_in].iter_mut().zip(x) {
                                *gwv = uo * xv;
                            }
                        }
                        self.accum(&mut grads, *weight, &gw, |x| x);
                    }
                    if self.needs(*input) {
                        let wdat = tw.data();
                        let mut gi = vec![F::zero(); d_in];
                        for o in 0..d_out {
                            let uo = u[o];
                            for (giv, &wv) in gi.iter_mut().zip(&wdat[o * d_in..(o + 1) * d_in]) {
                                *giv += uo * wv;
                            }
                        }
                        self.accum(&mut grads, *input, &gi, |x| x);
                    }
                }
                Op::SumAll(a) => {
                    if self.needs(*a) {
                        let u = g.item();
                        let gi = vec![u; self.value(*a).numel()];
                        self.accum(&mut grads, *a, &gi, |x| x);
                    }
                }
                Op::Pick { input, index } => {
                    if self.needs(*input) {
                        let mut gi = vec![F::zero(); self.value(*input).numel()];
                        gi[*index] = g.item();
                        self.accum(&mut grads, *input, &gi, |x| x);
                    }
                }
                Op::LnFloor { input, floor } => {
                    if self.needs(*input) {
                        let floor = *floor;
                        let x = self.value(*input).data();
                        let contrib: Vec<F> = g
                            .data()
                            .iter()
                            .zip(x)
                            .map(|(&u, &xv)| if xv > floor { u / xv } else { F::zero() })
                            .collect();
                        self.accum(&mut grads, *input, &contrib, |u| u);
                    }
                }
            }
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    /// Add `f(src[i])` into the gradient buffer of `target`.
    fn accum(
        &self,
        grads: &mut [Option<Tensor<F>>],
        target: NodeId,
        src: &[F],
        f: impl Fn(F) -> F,
    ) {
        if !self.needs(target) {
            return;
        }
        let buf = grads[target.0]
            .get_or_insert_with(|| Tensor::zeros(self.value(target).shape().to_vec()));
        for (g, &s) in buf.data_mut().iter_mut().zip(src) {
            *g += f(s);
        }
    }

    /// Add `f(src[i], other[i])` into the gradient buffer of `target`.
    fn accum_zip(
        &self,
        grads: &mut [Option<Tensor<F>>],
        target: NodeId,
        src: &[F],
        other: &[F],
        f: impl Fn(F, F) -> F,
    ) {
        if !self.needs(target) {
            return;
        }
        let buf = grads[target.0]
            .get_or_insert_with(|| Tensor::zeros(self.value(target).shape().to_vec()));
        for ((g, &s), &o) in buf.data_mut().iter_mut().zip(src).zip(other) {
            *g += f(s, o);
        }
    }
}

pub(crate) fn log_softmax_slice<F: Scalar>(x: &[F]) -> Vec<F> {
    let m = x.iter().copied().fold(F::neg_infinity(), F::max);
    let z: F = x.iter().map(|&v| (v - m).exp()).sum();
    let lz = z.ln();
    x.iter().map(|&v| v - m - lz).collect()
}

/// Dot product with eight independent accumulator lanes so the reduction
/// vectorizes; a plain `acc += a*b` loop is a serial dependency chain.
#[inline]
pub(crate) fn dot_slices<F: Scalar>(a: &[F], b: &[F]) -> F {
    const LANES: usize = 8;
    let mut lanes = [F::zero(); LANES];
    let a_chunks = a.chunks_exact(LANES);
    let b_chunks = b.chunks_exact(LANES);
    let (a_rem, b_rem) = (a_chunks.remainder(), b_chunks.remainder());
    for (ca, cb) in a_chunks.zip(b_chunks) {
        for l in 0..LANES {
            lanes[l] += ca[l] * cb[l];
        }
    }
    let mut acc = F::zero();
    for l in lanes {
        acc += l;
    }
    for (&x, &y) in a_rem.iter().zip(b_rem) {
        acc += x * y;
    }
    acc
}

fn dot_and_norms<F: Scalar>(a: &[F], b: &[F]) -> (F, F, F) {
    (dot_slices(a, b), dot_slices(a, a), dot_slices(b, b))
}

fn cosine_backward<F: Scalar>(a: &[F], b: &[F], upstream: F) -> (Vec<F>, Vec<F>) {
    let (dot, na2, nb2) = dot_and_norms(a, b);
    let (na, nb) = (na2.sqrt(), nb2.sqrt());
    if na == F::zero() || nb == F::zero() {
        return (vec![F::zero(); a.len()], vec![F::zero(); b.len()]);
    }
    let eps = F::from_f64(COSINE_EPS);
    let denom_raw = na * nb;
    if denom_raw < eps {
        // Guarded regime: cos = dot/eps, denominator held constant.
        let ga = b.iter().map(|&y| upstream * y / eps).collect();
        let gb = a.iter().map(|&x| upstream * x / eps).collect();
        return (ga, gb);
    }
    let c = dot / denom_raw;
    let ga = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| upstream * (y / denom_raw - c * x / na2))
        .collect();
    let gb = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| upstream * (x / denom_raw - c * y / nb2))
        .collect();
    (ga, gb)
}

fn dims3<'a, F: Scalar>(op: &'static str, t: &'a Tensor<F>) -> Result<(usize, usize, usize)> {
    let s = t.shape();
    if s.len() != 3 {
        return Err(NcrfError::shape(op, format!("want [C,H,W], got {:?}", s)));
    }
    Ok((s[0], s[1], s[2]))
}

#[derive(Clone, Copy)]
struct ConvDims {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    pad: usize,
    h_out: usize,
    w_out: usize,
}

/// Output rows `oy` whose input row `oy*stride + offset` is in `[0, size_in)`.
#[inline]
fn valid_out_range(size_in: usize, size_out: usize, stride: usize, offset: isize) -> (usize, usize) {
    let start = if offset >= 0 {
        0
    } else {
        ((-offset) as usize + stride - 1) / stride
    };
    let last_in = size_in as isize - 1 - offset;
    if last_in < 0 {
        return (0, 0);
    }
    let end = (last_in as usize / stride + 1).min(size_out);
    (start.min(end), end)
}

#[inline]
fn axpy<F: Scalar>(dst: &mut [F], a: F, src: &[F]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

/// Unfold the input into a `[C_in*k*k, H_out*W_out]` matrix so convolution
/// becomes row-contiguous multiply-accumulate passes.
fn im2col<F: Scalar>(input: &[F], d: &ConvDims) -> Vec<F> {
    let p = d.h_out * d.w_out;
    let kdim = d.c_in * d.k * d.k;
    let mut cols = vec![F::zero(); kdim * p];
    for ci in 0..d.c_in {
        let in_plane = ci * d.h * d.w;
        for ky in 0..d.k {
            let off_y = ky as isize - d.pad as isize;
            let (oy0, oy1) = valid_out_range(d.h, d.h_out, d.stride, off_y);
            for kx in 0..d.k {
                let off_x = kx as isize - d.pad as isize;
                let (ox0, ox1) = valid_out_range(d.w, d.w_out, d.stride, off_x);
                if ox1 <= ox0 {
                    continue;
                }
                let row = ((ci * d.k + ky) * d.k + kx) * p;
                for oy in oy0..oy1 {
                    let iy = (oy * d.stride) as isize + off_y;
                    let in_row = in_plane + iy as usize * d.w;
                    let col_row = row + oy * d.w_out;
                    if d.stride == 1 {
                        let ix0 = (ox0 as isize + off_x) as usize;
                        cols[col_row + ox0..col_row + ox1]
                            .copy_from_slice(&input[in_row + ix0..in_row + ix0 + (ox1 - ox0)]);
                    } else {
                        for ox in ox0..ox1 {
                            let ix = (ox * d.stride) as isize + off_x;
                            cols[col_row + ox] = input[in_row + ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add of the unfolded gradient back onto the input (im2col's
/// adjoint).
fn col2im_add<F: Scalar>(cols: &[F], gi: &mut [F], d: &ConvDims) {
    let p = d.h_out * d.w_out;
    for ci in 0..d.c_in {
        let in_plane = ci * d.h * d.w;
        for ky in 0..d.k {
            let off_y = ky as isize - d.pad as isize;
            let (oy0, oy1) = valid_out_range(d.h, d.h_out, d.stride, off_y);
            for kx in 0..d.k {
                let off_x = kx as isize - d.pad as isize;
                let (ox0, ox1) = valid_out_range(d.w, d.w_out, d.stride, off_x);
                if ox1 <= ox0 {
                    continue;
                }
                let row = ((ci * d.k + ky) * d.k + kx) * p;
                for oy in oy0..oy1 {
                    let iy = (oy * d.stride) as isize + off_y;
                    let in_row = in_plane + iy as usize * d.w;
                    let col_row = row + oy * d.w_out;
                    if d.stride == 1 {
                        let ix0 = (ox0 as isize + off_x) as usize;
                        let dst = &mut gi[in_row + ix0..in_row + ix0 + (ox1 - ox0)];
                        axpy(dst, F::one(), &cols[col_row + ox0..col_row + ox1]);
                    } else {
                        for ox in ox0..ox1 {
                            let ix = (ox * d.stride) as isize + off_x;
                            gi[in_row + ix as usize] += cols[col_row + ox];
                        }
                    }
                }
            }
        }
    }
}

fn conv2d_forward<F: Scalar>(input: &[F], weight: &[F], bias: &[F], out: &mut [F], d: ConvDims) {
    let p = d.h_out * d.w_out;
    let kdim = d.c_in * d.k * d.k;
    let cols = im2col(input, &d);
    for co in 0..d.c_out {
        let out_row = &mut out[co * p..(co + 1) * p];
        out_row.fill(bias[co]);
        for kk in 0..kdim {
            axpy(out_row, weight[co * kdim + kk], &cols[kk * p..(kk + 1) * p]);
        }
    }
}

fn conv2d_backward_bias<F: Scalar>(g_out: &[F], d: &ConvDims) -> Vec<F> {
    let p = d.h_out * d.w_out;
    (0..d.c_out)
        .map(|co| g_out[co * p..(co + 1) * p].iter().copied().sum())
        .collect()
}

fn conv2d_backward_weight<F: Scalar>(input: &[F], g_out: &[F], d: &ConvDims) -> Vec<F> {
    let p = d.h_out * d.w_out;
    let kdim = d.c_in * d.k * d.k;
    let cols = im2col(input, d);
    let mut gw = vec![F::zero(); d.c_out * kdim];
    for co in 0..d.c_out {
        let up = &g_out[co * p..(co + 1) * p];
        for kk in 0..kdim {
            gw[co * kdim + kk] = dot_slices(up, &cols[kk * p..(kk + 1) * p]);
        }
    }
    gw
}

fn conv2d_backward_input<F: Scalar>(weight: &[F], g_out: &[F], d: &ConvDims) -> Vec<F> {
    let p = d.h_out * d.w_out;
    let kdim = d.c_in * d.k * d.k;
    let mut gcols = vec![F::zero(); kdim * p];
    for co in 0..d.c_out {
        let up = &g_out[co * p..(co + 1) * p];
        for kk in 0..kdim {
            axpy(&mut gcols[kk * p..(kk + 1) * p], weight[co * kdim + kk], up);
        }
    }
    let mut gi = vec![F::zero(); d.c_in * d.h * d.w];
    col2im_add(&gcols, &mut gi, d);
    gi
}
