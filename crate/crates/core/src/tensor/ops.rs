//! Operation kinds recorded on the tape: forward evaluation and adjoint
//! rules.
//!
//! Each op validates shapes when it is recorded (see the builders on
//! [`Graph`](super::Graph)); `eval` recomputes values from input values,
//! so replaying a tape with rebound leaves reproduces the forward pass
//! bit-for-bit. Stochastic ops regenerate their masks from a stored seed.

use super::kernels::{self, ConvDims, ConvTDims};
use super::{strides_of, NodeId, Tensor};
use crate::rng::rng_from_seed;
use rand::Rng;

/// Read access to the values (and gradient-participation flags) of nodes
/// recorded earlier on the tape.
pub(crate) trait ValueSource {
    fn value_of(&self, id: NodeId) -> &Tensor;
    fn needs_grad(&self, id: NodeId) -> bool;
}

/// Granularity of a dropout mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropKind {
    /// Independent mask per element.
    Element,
    /// One mask value per (sample, channel) of a rank-4 input.
    Channel,
}

/// Token indices for gather/scatter: one set shared by the whole batch,
/// or an independent set per batch row (all rows the same length).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenSel {
    Shared(Vec<usize>),
    PerRow(Vec<Vec<usize>>),
}

impl TokenSel {
    pub fn count(&self) -> usize {
        match self {
            TokenSel::Shared(v) => v.len(),
            TokenSel::PerRow(rows) => rows.first().map(|r| r.len()).unwrap_or(0),
        }
    }

    pub fn row(&self, b: usize) -> &[usize] {
        match self {
            TokenSel::Shared(v) => v,
            TokenSel::PerRow(rows) => &rows[b],
        }
    }

    pub fn rows(&self) -> Option<usize> {
        match self {
            TokenSel::Shared(_) => None,
            TokenSel::PerRow(rows) => Some(rows.len()),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum BnStats {
    /// Batch statistics, filled in during forward evaluation.
    Train { mean: Vec<f64>, var: Vec<f64> },
    /// Frozen statistics supplied by the caller (running averages).
    Eval { mean: Vec<f64>, var: Vec<f64> },
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Matmul {
        a: NodeId,
        b: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        a: NodeId,
        c: f64,
    },
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        dims: ConvDims,
    },
    ConvTranspose2d {
        input: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        dims: ConvTDims,
    },
    MaxPool2d {
        input: NodeId,
        window: usize,
        stride: usize,
        padding: usize,
        /// Flat input index of the window max, per output element.
        argmax: Vec<usize>,
    },
    Relu {
        a: NodeId,
    },
    Tanh {
        a: NodeId,
    },
    Gelu {
        a: NodeId,
    },
    Softmax {
        a: NodeId,
    },
    LogSoftmax {
        a: NodeId,
    },
    LayerNorm {
        a: NodeId,
        gain: NodeId,
        bias: NodeId,
        eps: f64,
        inv_std: Vec<f64>,
        normed: Vec<f64>,
    },
    BatchNorm {
        a: NodeId,
        gain: NodeId,
        bias: NodeId,
        eps: f64,
        stats: BnStats,
    },
    Dropout {
        a: NodeId,
        p: f64,
        seed: u64,
        kind: DropKind,
    },
    DropPath {
        a: NodeId,
        p: f64,
        seed: u64,
    },
    Reshape {
        a: NodeId,
        shape: Vec<usize>,
    },
    MeanOverAxis {
        a: NodeId,
        axis: usize,
    },
    Concat {
        parts: Vec<NodeId>,
        axis: usize,
    },
    GatherTokens {
        a: NodeId,
        indices: TokenSel,
    },
    ScatterTokens {
        a: NodeId,
        indices: TokenSel,
        slots: usize,
    },
    GatherLabels {
        a: NodeId,
        labels: Vec<usize>,
    },
    SliceLast {
        a: NodeId,
        start: usize,
        len: usize,
    },
    Permute {
        a: NodeId,
        axes: Vec<usize>,
    },
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Matmul { .. } => "matmul",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv_transpose2d",
            Op::MaxPool2d { .. } => "maxpool2d",
            Op::Relu { .. } => "relu",
            Op::Tanh { .. } => "tanh",
            Op::Gelu { .. } => "gelu",
            Op::Softmax { .. } => "softmax",
            Op::LogSoftmax { .. } => "log_softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::BatchNorm { .. } => "batch_norm",
            Op::Dropout { .. } => "dropout",
            Op::DropPath { .. } => "drop_path",
            Op::Reshape { .. } => "reshape",
            Op::MeanOverAxis { .. } => "mean_over_axis",
            Op::Concat { .. } => "concat",
            Op::GatherTokens { .. } => "gather_tokens",
            Op::ScatterTokens { .. } => "scatter_tokens",
            Op::GatherLabels { .. } => "gather_labels",
            Op::SliceLast { .. } => "slice_last",
            Op::Permute { .. } => "permute",
        }
    }

    pub(crate) fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::Matmul { a, b } | Op::Add { a, b } | Op::Mul { a, b } => vec![*a, *b],
            Op::Scale { a, .. }
            | Op::Relu { a }
            | Op::Tanh { a }
            | Op::Gelu { a }
            | Op::Softmax { a }
            | Op::LogSoftmax { a }
            | Op::Dropout { a, .. }
            | Op::DropPath { a, .. }
            | Op::Reshape { a, .. }
            | Op::MeanOverAxis { a, .. }
            | Op::GatherTokens { a, .. }
            | Op::ScatterTokens { a, .. }
            | Op::GatherLabels { a, .. }
            | Op::SliceLast { a, .. }
            | Op::Permute { a, .. } => vec![*a],
            Op::MaxPool2d { input, .. } => vec![*input],
            Op::Conv2d { input, kernel, bias, .. } | Op::ConvTranspose2d { input, kernel, bias, .. } => {
                let mut v = vec![*input, *kernel];
                if let Some(b) = bias {
                    v.push(*b);
                }
                v
            }
            Op::LayerNorm { a, gain, bias, .. } | Op::BatchNorm { a, gain, bias, .. } => {
                vec![*a, *gain, *bias]
            }
            Op::Concat { parts, .. } => parts.clone(),
        }
    }

    /// Recomputes this node's value from its inputs' current values.
    pub(crate) fn eval(&mut self, vals: &dyn ValueSource, out_shape: &[usize]) -> Tensor {
        let val = |id: NodeId| vals.value_of(id);
        match self {
            Op::Leaf => unreachable!("leaf values are never recomputed"),
            Op::Matmul { a, b } => eval_matmul(val(*a), val(*b)),
            Op::Add { a, b } => eval_add(val(*a), val(*b)),
            Op::Mul { a, b } => {
                let (x, y) = (val(*a), val(*b));
                let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
                Tensor::new(x.shape(), data).expect("mul shape")
            }
            Op::Scale { a, c } => {
                let x = val(*a);
                let data = x.data().iter().map(|v| *c * v).collect();
                Tensor::new(x.shape(), data).expect("scale shape")
            }
            Op::Conv2d { input, kernel, bias, dims } => {
                let mut out = Tensor::zeros(out_shape);
                let b = bias.map(|id| val(id).data());
                kernels::conv2d_forward(val(*input).data(), val(*kernel).data(), b, *dims, out.data_mut());
                out
            }
            Op::ConvTranspose2d { input, kernel, bias, dims } => {
                let mut out = Tensor::zeros(out_shape);
                let b = bias.map(|id| val(id).data());
                kernels::conv_transpose2d_forward(val(*input).data(), val(*kernel).data(), b, *dims, out.data_mut());
                out
            }
            Op::MaxPool2d { input, window, stride, padding, argmax } => {
                eval_maxpool(val(*input), *window, *stride, *padding, out_shape, argmax)
            }
            Op::Relu { a } => unary(val(*a), |x| if x > 0.0 { x } else { 0.0 }),
            Op::Tanh { a } => unary(val(*a), f64::tanh),
            Op::Gelu { a } => unary(val(*a), gelu),
            Op::Softmax { a } => eval_softmax(val(*a), false),
            Op::LogSoftmax { a } => eval_softmax(val(*a), true),
            Op::LayerNorm { a, gain, bias, eps, inv_std, normed } => {
                eval_layer_norm(val(*a), val(*gain), val(*bias), *eps, inv_std, normed)
            }
            Op::BatchNorm { a, gain, bias, eps, stats } => eval_batch_norm(val(*a), val(*gain), val(*bias), *eps, stats),
            Op::Dropout { a, p, seed, kind } => {
                let x = val(*a);
                let mask = dropout_mask(x.shape(), *p, *seed, *kind);
                let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
                Tensor::new(x.shape(), data).expect("dropout shape")
            }
            Op::DropPath { a, p, seed } => {
                let x = val(*a);
                let mask = drop_path_mask(x.shape()[0], *p, *seed);
                let per = x.len() / x.shape()[0];
                let mut data = x.data().to_vec();
                for (s, m) in mask.iter().enumerate() {
                    if *m != 1.0 {
                        for v in &mut data[s * per..(s + 1) * per] {
                            *v *= m;
                        }
                    }
                }
                Tensor::new(x.shape(), data).expect("drop_path shape")
            }
            Op::Reshape { a, shape } => Tensor::new(shape, val(*a).data().to_vec()).expect("reshape"),
            Op::MeanOverAxis { a, axis } => eval_mean_over_axis(val(*a), *axis, out_shape),
            Op::Concat { parts, axis } => {
                let tensors: Vec<&Tensor> = parts.iter().map(|id| val(*id)).collect();
                eval_concat(&tensors, *axis, out_shape)
            }
            Op::GatherTokens { a, indices } => eval_gather_tokens(val(*a), indices),
            Op::ScatterTokens { a, indices, slots } => eval_scatter_tokens(val(*a), indices, *slots),
            Op::GatherLabels { a, labels } => {
                let x = val(*a);
                let c = x.shape()[1];
                let data = labels.iter().enumerate().map(|(b, &l)| x.data()[b * c + l]).collect();
                Tensor::new(&[labels.len()], data).expect("gather_labels")
            }
            Op::SliceLast { a, start, len } => eval_slice_last(val(*a), *start, *len),
            Op::Permute { a, axes } => eval_permute(val(*a), axes, out_shape),
        }
    }

    /// Propagates `gout` to the inputs. Returns `(input, delta)` pairs for
    /// inputs that participate in gradients.
    pub(crate) fn adjoint(&self, vals: &dyn ValueSource, own: &Tensor, gout: &[f64]) -> Vec<(NodeId, Vec<f64>)> {
        let val = |id: NodeId| vals.value_of(id);
        let needs = |id: NodeId| vals.needs_grad(id);
        let mut deltas: Vec<(NodeId, Vec<f64>)> = Vec::new();
        match self {
            Op::Leaf => {}
            Op::Matmul { a, b } => adjoint_matmul(val(*a), val(*b), gout, needs(*a), needs(*b), *a, *b, &mut deltas),
            Op::Add { a, b } => {
                if needs(*a) {
                    deltas.push((*a, gout.to_vec()));
                }
                if needs(*b) {
                    let bt = val(*b);
                    if bt.len() == gout.len() {
                        deltas.push((*b, gout.to_vec()));
                    } else {
                        // Broadcast rhs: fold the leading axes back down.
                        let mut db = vec![0.0; bt.len()];
                        for chunk in gout.chunks(bt.len()) {
                            for (d, g) in db.iter_mut().zip(chunk) {
                                *d += g;
                            }
                        }
                        deltas.push((*b, db));
                    }
                }
            }
            Op::Mul { a, b } => {
                if needs(*a) {
                    let y = val(*b);
                    deltas.push((*a, gout.iter().zip(y.data()).map(|(g, v)| g * v).collect()));
                }
                if needs(*b) {
                    let x = val(*a);
                    deltas.push((*b, gout.iter().zip(x.data()).map(|(g, v)| g * v).collect()));
                }
            }
            Op::Scale { a, c } => {
                if needs(*a) {
                    deltas.push((*a, gout.iter().map(|g| c * g).collect()));
                }
            }
            Op::Conv2d { input, kernel, bias, dims } => {
                if needs(*input) {
                    let mut d = vec![0.0; val(*input).len()];
                    kernels::conv2d_backward_input(gout, val(*kernel).data(), *dims, &mut d);
                    deltas.push((*input, d));
                }
                let need_k = needs(*kernel);
                let need_b = bias.map(|b| needs(b)).unwrap_or(false);
                if need_k || need_b {
                    let mut dk = vec![0.0; val(*kernel).len()];
                    let mut db = bias.map(|b| vec![0.0; val(b).len()]);
                    kernels::conv2d_backward_kernel(val(*input).data(), gout, *dims, &mut dk, db.as_deref_mut());
                    if need_k {
                        deltas.push((*kernel, dk));
                    }
                    if need_b {
                        deltas.push((bias.unwrap(), db.unwrap()));
                    }
                }
            }
            Op::ConvTranspose2d { input, kernel, bias, dims } => {
                if needs(*input) {
                    let mut d = vec![0.0; val(*input).len()];
                    kernels::conv_transpose2d_backward_input(gout, val(*kernel).data(), *dims, &mut d);
                    deltas.push((*input, d));
                }
                let need_k = needs(*kernel);
                let need_b = bias.map(|b| needs(b)).unwrap_or(false);
                if need_k || need_b {
                    let mut dk = vec![0.0; val(*kernel).len()];
                    let mut db = bias.map(|b| vec![0.0; val(b).len()]);
                    kernels::conv_transpose2d_backward_kernel(val(*input).data(), gout, *dims, &mut dk, db.as_deref_mut());
                    if need_k {
                        deltas.push((*kernel, dk));
                    }
                    if need_b {
                        deltas.push((bias.unwrap(), db.unwrap()));
                    }
                }
            }
            Op::MaxPool2d { input, argmax, .. } => {
                if needs(*input) {
                    let mut d = vec![0.0; val(*input).len()];
                    for (g, &src) in gout.iter().zip(argmax) {
                        d[src] += g;
                    }
                    deltas.push((*input, d));
                }
            }
            Op::Relu { a } => {
                if needs(*a) {
                    let x = val(*a);
                    deltas.push((
                        *a,
                        gout.iter()
                            .zip(x.data())
                            .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                            .collect(),
                    ));
                }
            }
            Op::Tanh { a } => {
                if needs(*a) {
                    deltas.push((*a, gout.iter().zip(own.data()).map(|(g, y)| g * (1.0 - y * y)).collect()));
                }
            }
            Op::Gelu { a } => {
                if needs(*a) {
                    let x = val(*a);
                    deltas.push((*a, gout.iter().zip(x.data()).map(|(g, v)| g * gelu_grad(*v)).collect()));
                }
            }
            Op::Softmax { a } => {
                if needs(*a) {
                    deltas.push((*a, adjoint_softmax(own, gout)));
                }
            }
            Op::LogSoftmax { a } => {
                if needs(*a) {
                    deltas.push((*a, adjoint_log_softmax(own, gout)));
                }
            }
            Op::LayerNorm { a, gain, bias, inv_std, normed, .. } => {
                adjoint_layer_norm(val(*gain), inv_std, normed, gout, &needs, *a, *gain, *bias, &mut deltas);
            }
            Op::BatchNorm { a, gain, bias, eps, stats } => {
                adjoint_batch_norm(val(*a), val(*gain), *eps, stats, gout, &needs, *a, *gain, *bias, &mut deltas);
            }
            Op::Dropout { a, p, seed, kind } => {
                if needs(*a) {
                    let x = val(*a);
                    let mask = dropout_mask(x.shape(), *p, *seed, *kind);
                    deltas.push((*a, gout.iter().zip(&mask).map(|(g, m)| g * m).collect()));
                }
            }
            Op::DropPath { a, p, seed } => {
                if needs(*a) {
                    let x = val(*a);
                    let mask = drop_path_mask(x.shape()[0], *p, *seed);
                    let per = x.len() / x.shape()[0];
                    let mut d = gout.to_vec();
                    for (s, m) in mask.iter().enumerate() {
                        if *m != 1.0 {
                            for v in &mut d[s * per..(s + 1) * per] {
                                *v *= m;
                            }
                        }
                    }
                    deltas.push((*a, d));
                }
            }
            Op::Reshape { a, .. } => {
                if needs(*a) {
                    deltas.push((*a, gout.to_vec()));
                }
            }
            Op::MeanOverAxis { a, axis } => {
                if needs(*a) {
                    let x = val(*a);
                    let shape = x.shape();
                    let dm = shape[*axis];
                    let outer: usize = shape[..*axis].iter().product();
                    let inner: usize = shape[*axis + 1..].iter().product();
                    let scale = 1.0 / dm as f64;
                    let mut d = vec![0.0; x.len()];
                    for o in 0..outer {
                        for j in 0..dm {
                            let dst = &mut d[(o * dm + j) * inner..(o * dm + j + 1) * inner];
                            let src = &gout[o * inner..(o + 1) * inner];
                            for (dv, g) in dst.iter_mut().zip(src) {
                                *dv += g * scale;
                            }
                        }
                    }
                    deltas.push((*a, d));
                }
            }
            Op::Concat { parts, axis } => {
                let shapes: Vec<&[usize]> = parts.iter().map(|id| val(*id).shape()).collect();
                let outer: usize = shapes[0][..*axis].iter().product();
                let inner: usize = shapes[0][*axis + 1..].iter().product();
                let total_axis: usize = shapes.iter().map(|s| s[*axis]).sum();
                let mut offset = 0usize;
                for (part, shape) in parts.iter().zip(&shapes) {
                    let width = shape[*axis] * inner;
                    if needs(*part) {
                        let mut d = vec![0.0; outer * width];
                        for o in 0..outer {
                            let src = &gout[o * total_axis * inner + offset..][..width];
                            d[o * width..(o + 1) * width].copy_from_slice(src);
                        }
                        deltas.push((*part, d));
                    }
                    offset += width;
                }
            }
            Op::GatherTokens { a, indices } => {
                if needs(*a) {
                    let x = val(*a);
                    let (b, t, dm) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                    let k = indices.count();
                    let mut d = vec![0.0; x.len()];
                    for bi in 0..b {
                        for (ki, &src) in indices.row(bi).iter().enumerate() {
                            let dst = &mut d[(bi * t + src) * dm..(bi * t + src + 1) * dm];
                            let g = &gout[(bi * k + ki) * dm..(bi * k + ki + 1) * dm];
                            for (dv, gv) in dst.iter_mut().zip(g) {
                                *dv += gv;
                            }
                        }
                    }
                    deltas.push((*a, d));
                }
            }
            Op::ScatterTokens { a, indices, slots } => {
                if needs(*a) {
                    let x = val(*a);
                    let (b, k, dm) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                    let mut d = vec![0.0; x.len()];
                    for bi in 0..b {
                        for (ki, &dst) in indices.row(bi).iter().enumerate() {
                            let g = &gout[(bi * slots + dst) * dm..(bi * slots + dst + 1) * dm];
                            d[(bi * k + ki) * dm..(bi * k + ki + 1) * dm].copy_from_slice(g);
                        }
                    }
                    deltas.push((*a, d));
                }
            }
            Op::GatherLabels { a, labels } => {
                if needs(*a) {
                    let x = val(*a);
                    let c = x.shape()[1];
                    let mut d = vec![0.0; x.len()];
                    for (b, &l) in labels.iter().enumerate() {
                        d[b * c + l] += gout[b];
                    }
                    deltas.push((*a, d));
                }
            }
            Op::SliceLast { a, start, len } => {
                if needs(*a) {
                    let x = val(*a);
                    let d_last = *x.shape().last().unwrap();
                    let rows = x.len() / d_last;
                    let mut d = vec![0.0; x.len()];
                    for r in 0..rows {
                        d[r * d_last + start..r * d_last + start + len].copy_from_slice(&gout[r * len..(r + 1) * len]);
                    }
                    deltas.push((*a, d));
                }
            }
            Op::Permute { a, axes } => {
                if needs(*a) {
                    let x = val(*a);
                    // gout has the permuted shape; push it back with the
                    // inverse permutation.
                    let mut inverse = vec![0usize; axes.len()];
                    for (i, &ax) in axes.iter().enumerate() {
                        inverse[ax] = i;
                    }
                    let permuted_shape: Vec<usize> = axes.iter().map(|&ax| x.shape()[ax]).collect();
                    let g = Tensor::new(&permuted_shape, gout.to_vec()).expect("permute grad");
                    let back = eval_permute(&g, &inverse, x.shape());
                    deltas.push((*a, back.into_data()));
                }
            }
        }
        deltas
    }
}

// ---------------------------------------------------------------------------
// forward helpers
// ---------------------------------------------------------------------------

fn unary(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(x.shape(), x.data().iter().map(|v| f(*v)).collect()).expect("unary shape")
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact Gaussian-CDF form of GELU.
fn gelu(x: f64) -> f64 {
    x * 0.5 * (1.0 + statrs::function::erf::erf(x / std::f64::consts::SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let phi_big = 0.5 * (1.0 + statrs::function::erf::erf(x / std::f64::consts::SQRT_2));
    let phi_small = FRAC_1_SQRT_2PI * (-0.5 * x * x).exp();
    phi_big + x * phi_small
}

pub(crate) fn eval_matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let ar = a.rank();
    let (m, k) = (a.shape()[ar - 2], a.shape()[ar - 1]);
    let n = b.shape()[b.rank() - 1];
    let batch: usize = a.shape()[..ar - 2].iter().product();
    let mut out_shape = a.shape()[..ar - 2].to_vec();
    out_shape.push(m);
    out_shape.push(n);
    let mut out = Tensor::zeros(&out_shape);
    let b_batched = b.rank() > 2;
    if batch == 1 {
        kernels::matmul_nn(a.data(), b.data(), m, k, n, out.data_mut());
    } else {
        let a_data = a.data();
        let b_data = b.data();
        crate::parallel::for_each_chunk_mut(out.data_mut(), m * n, |bi, chunk| {
            let a_slice = &a_data[bi * m * k..(bi + 1) * m * k];
            let b_slice = if b_batched { &b_data[bi * k * n..(bi + 1) * k * n] } else { b_data };
            kernels::matmul_nn_seq(a_slice, b_slice, m, k, n, chunk);
        });
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn adjoint_matmul(
    a: &Tensor,
    b: &Tensor,
    gout: &[f64],
    need_a: bool,
    need_b: bool,
    a_id: NodeId,
    b_id: NodeId,
    deltas: &mut Vec<(NodeId, Vec<f64>)>,
) {
    let ar = a.rank();
    let (m, k) = (a.shape()[ar - 2], a.shape()[ar - 1]);
    let n = b.shape()[b.rank() - 1];
    let batch: usize = a.shape()[..ar - 2].iter().product();
    let b_batched = b.rank() > 2;
    if need_a {
        let mut da = vec![0.0; a.len()];
        for bi in 0..batch {
            let g = &gout[bi * m * n..(bi + 1) * m * n];
            let b_slice = if b_batched { &b.data()[bi * k * n..(bi + 1) * k * n] } else { b.data() };
            kernels::matmul_nt_acc(g, b_slice, m, n, k, &mut da[bi * m * k..(bi + 1) * m * k]);
        }
        deltas.push((a_id, da));
    }
    if need_b {
        let mut db = vec![0.0; b.len()];
        for bi in 0..batch {
            let g = &gout[bi * m * n..(bi + 1) * m * n];
            let a_slice = &a.data()[bi * m * k..(bi + 1) * m * k];
            let db_slice = if b_batched { &mut db[bi * k * n..(bi + 1) * k * n] } else { &mut db[..] };
            kernels::matmul_tn_acc(a_slice, g, k, m, n, db_slice);
        }
        deltas.push((b_id, db));
    }
}

fn eval_add(a: &Tensor, b: &Tensor) -> Tensor {
    let mut data = a.data().to_vec();
    if b.len() == a.len() {
        for (d, v) in data.iter_mut().zip(b.data()) {
            *d += v;
        }
    } else {
        for chunk in data.chunks_mut(b.len()) {
            for (d, v) in chunk.iter_mut().zip(b.data()) {
                *d += v;
            }
        }
    }
    Tensor::new(a.shape(), data).expect("add shape")
}

fn eval_maxpool(
    x: &Tensor,
    window: usize,
    stride: usize,
    padding: usize,
    out_shape: &[usize],
    argmax: &mut Vec<usize>,
) -> Tensor {
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (ho, wo) = (out_shape[2], out_shape[3]);
    let mut out = Tensor::zeros(out_shape);
    argmax.clear();
    argmax.resize(out.len(), 0);
    let data = x.data();
    let out_data = out.data_mut();
    let mut o = 0usize;
    for bi in 0..b {
        for ci in 0..c {
            let plane = &data[(bi * c + ci) * h * w..];
            for i in 0..ho {
                for j in 0..wo {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    // Row-major scan; strict > keeps the first max on ties.
                    for ki in 0..window {
                        let hi = (i * stride + ki) as isize - padding as isize;
                        if hi < 0 || hi >= h as isize {
                            continue;
                        }
                        for kj in 0..window {
                            let wi = (j * stride + kj) as isize - padding as isize;
                            if wi < 0 || wi >= w as isize {
                                continue;
                            }
                            let idx = hi as usize * w + wi as usize;
                            let v = plane[idx];
                            if v > best {
                                best = v;
                                best_idx = (bi * c + ci) * h * w + idx;
                            }
                        }
                    }
                    out_data[o] = best;
                    argmax[o] = best_idx;
                    o += 1;
                }
            }
        }
    }
    out
}

fn eval_softmax(x: &Tensor, log: bool) -> Tensor {
    let d = *x.shape().last().unwrap_or(&1);
    let mut data = x.data().to_vec();
    for row in data.chunks_mut(d) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v -= m;
            sum += v.exp();
        }
        if log {
            let ls = sum.ln();
            for v in row.iter_mut() {
                *v -= ls;
            }
        } else {
            for v in row.iter_mut() {
                *v = v.exp() / sum;
            }
        }
    }
    Tensor::new(x.shape(), data).expect("softmax shape")
}

fn adjoint_softmax(y: &Tensor, gout: &[f64]) -> Vec<f64> {
    let d = *y.shape().last().unwrap_or(&1);
    let mut dx = vec![0.0; y.len()];
    for (r, (yrow, grow)) in y.data().chunks(d).zip(gout.chunks(d)).enumerate() {
        let dot: f64 = yrow.iter().zip(grow).map(|(a, b)| a * b).sum();
        for i in 0..d {
            dx[r * d + i] = yrow[i] * (grow[i] - dot);
        }
    }
    dx
}

fn adjoint_log_softmax(y: &Tensor, gout: &[f64]) -> Vec<f64> {
    let d = *y.shape().last().unwrap_or(&1);
    let mut dx = vec![0.0; y.len()];
    for (r, (yrow, grow)) in y.data().chunks(d).zip(gout.chunks(d)).enumerate() {
        let gsum: f64 = grow.iter().sum();
        for i in 0..d {
            dx[r * d + i] = grow[i] - yrow[i].exp() * gsum;
        }
    }
    dx
}

fn eval_layer_norm(
    x: &Tensor,
    gain: &Tensor,
    bias: &Tensor,
    eps: f64,
    inv_std: &mut Vec<f64>,
    normed: &mut Vec<f64>,
) -> Tensor {
    let d = *x.shape().last().unwrap();
    let rows = x.len() / d;
    inv_std.clear();
    inv_std.resize(rows, 0.0);
    normed.clear();
    normed.resize(x.len(), 0.0);
    let mut data = vec![0.0; x.len()];
    for r in 0..rows {
        let row = &x.data()[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + eps).sqrt();
        inv_std[r] = inv;
        for i in 0..d {
            let nh = (row[i] - mean) * inv;
            normed[r * d + i] = nh;
            data[r * d + i] = gain.data()[i] * nh + bias.data()[i];
        }
    }
    Tensor::new(x.shape(), data).expect("layer_norm shape")
}

#[allow(clippy::too_many_arguments)]
fn adjoint_layer_norm(
    gain: &Tensor,
    inv_std: &[f64],
    normed: &[f64],
    gout: &[f64],
    needs: &dyn Fn(NodeId) -> bool,
    a: NodeId,
    gain_id: NodeId,
    bias_id: NodeId,
    deltas: &mut Vec<(NodeId, Vec<f64>)>,
) {
    let d = gain.len();
    let rows = gout.len() / d;
    if needs(a) {
        let mut dx = vec![0.0; gout.len()];
        for r in 0..rows {
            let g = &gout[r * d..(r + 1) * d];
            let nh = &normed[r * d..(r + 1) * d];
            let mut m1 = 0.0;
            let mut m2 = 0.0;
            for i in 0..d {
                let dh = g[i] * gain.data()[i];
                m1 += dh;
                m2 += dh * nh[i];
            }
            m1 /= d as f64;
            m2 /= d as f64;
            for i in 0..d {
                let dh = g[i] * gain.data()[i];
                dx[r * d + i] = inv_std[r] * (dh - m1 - nh[i] * m2);
            }
        }
        deltas.push((a, dx));
    }
    if needs(gain_id) {
        let mut dg = vec![0.0; d];
        for r in 0..rows {
            for i in 0..d {
                dg[i] += gout[r * d + i] * normed[r * d + i];
            }
        }
        deltas.push((gain_id, dg));
    }
    if needs(bias_id) {
        let mut db = vec![0.0; d];
        for r in 0..rows {
            for i in 0..d {
                db[i] += gout[r * d + i];
            }
        }
        deltas.push((bias_id, db));
    }
}

/// (channel count, reduce count, iterator mapping flat index -> channel)
fn bn_layout(shape: &[usize]) -> (usize, usize, Vec<usize>) {
    match shape.len() {
        2 => {
            let (b, f) = (shape[0], shape[1]);
            let map = (0..b * f).map(|i| i % f).collect();
            (f, b, map)
        }
        4 => {
            let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
            let hw = h * w;
            let map = (0..b * c * hw).map(|i| (i / hw) % c).collect();
            (c, b * hw, map)
        }
        _ => unreachable!("batch_norm rank validated at build"),
    }
}

fn eval_batch_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64, stats: &mut BnStats) -> Tensor {
    let (channels, reduce, chan_of) = bn_layout(x.shape());
    let (mean, var): (Vec<f64>, Vec<f64>) = match stats {
        BnStats::Train { mean, var } => {
            let mut m = vec![0.0; channels];
            for (i, v) in x.data().iter().enumerate() {
                m[chan_of[i]] += v;
            }
            for mv in m.iter_mut() {
                *mv /= reduce as f64;
            }
            let mut s = vec![0.0; channels];
            for (i, v) in x.data().iter().enumerate() {
                let d = v - m[chan_of[i]];
                s[chan_of[i]] += d * d;
            }
            for sv in s.iter_mut() {
                *sv /= reduce as f64;
            }
            *mean = m.clone();
            *var = s.clone();
            (m, s)
        }
        BnStats::Eval { mean, var } => (mean.clone(), var.clone()),
    };
    let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut data = vec![0.0; x.len()];
    for (i, v) in x.data().iter().enumerate() {
        let c = chan_of[i];
        data[i] = gain.data()[c] * (v - mean[c]) * inv[c] + bias.data()[c];
    }
    Tensor::new(x.shape(), data).expect("batch_norm shape")
}

#[allow(clippy::too_many_arguments)]
fn adjoint_batch_norm(
    x: &Tensor,
    gain: &Tensor,
    eps: f64,
    stats: &BnStats,
    gout: &[f64],
    needs: &dyn Fn(NodeId) -> bool,
    a: NodeId,
    gain_id: NodeId,
    bias_id: NodeId,
    deltas: &mut Vec<(NodeId, Vec<f64>)>,
) {
    let (channels, reduce, chan_of) = bn_layout(x.shape());
    let (mean, var, train) = match stats {
        BnStats::Train { mean, var } => (mean, var, true),
        BnStats::Eval { mean, var } => (mean, var, false),
    };
    let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let normed = |i: usize| {
        let c = chan_of[i];
        (x.data()[i] - mean[c]) * inv[c]
    };
    if needs(a) {
        let mut dx = vec![0.0; x.len()];
        if train {
            let mut m1 = vec![0.0; channels];
            let mut m2 = vec![0.0; channels];
            for (i, g) in gout.iter().enumerate() {
                let c = chan_of[i];
                let dh = g * gain.data()[c];
                m1[c] += dh;
                m2[c] += dh * normed(i);
            }
            for c in 0..channels {
                m1[c] /= reduce as f64;
                m2[c] /= reduce as f64;
            }
            for (i, g) in gout.iter().enumerate() {
                let c = chan_of[i];
                let dh = g * gain.data()[c];
                dx[i] = inv[c] * (dh - m1[c] - normed(i) * m2[c]);
            }
        } else {
            for (i, g) in gout.iter().enumerate() {
                let c = chan_of[i];
                dx[i] = g * gain.data()[c] * inv[c];
            }
        }
        deltas.push((a, dx));
    }
    if needs(gain_id) {
        let mut dg = vec![0.0; channels];
        for (i, g) in gout.iter().enumerate() {
            dg[chan_of[i]] += g * normed(i);
        }
        deltas.push((gain_id, dg));
    }
    if needs(bias_id) {
        let mut db = vec![0.0; channels];
        for (i, g) in gout.iter().enumerate() {
            db[chan_of[i]] += g;
        }
        deltas.push((bias_id, db));
    }
}

fn dropout_mask(shape: &[usize], p: f64, seed: u64, kind: DropKind) -> Vec<f64> {
    let keep_scale = 1.0 / (1.0 - p);
    let mut rng = rng_from_seed(seed);
    let total: usize = shape.iter().product();
    match kind {
        DropKind::Element => (0..total)
            .map(|_| if rng.gen::<f64>() >= p { keep_scale } else { 0.0 })
            .collect(),
        DropKind::Channel => {
            let (b, c) = (shape[0], shape[1]);
            let plane: usize = shape[2..].iter().product();
            let channel_mask: Vec<f64> = (0..b * c)
                .map(|_| if rng.gen::<f64>() >= p { keep_scale } else { 0.0 })
                .collect();
            let mut mask = vec![0.0; total];
            for (bc, m) in channel_mask.iter().enumerate() {
                mask[bc * plane..(bc + 1) * plane].fill(*m);
            }
            mask
        }
    }
}

fn drop_path_mask(samples: usize, p: f64, seed: u64) -> Vec<f64> {
    let keep_scale = 1.0 / (1.0 - p);
    let mut rng = rng_from_seed(seed);
    (0..samples)
        .map(|_| if rng.gen::<f64>() >= p { keep_scale } else { 0.0 })
        .collect()
}

fn eval_mean_over_axis(x: &Tensor, axis: usize, out_shape: &[usize]) -> Tensor {
    let shape = x.shape();
    let dm = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = Tensor::zeros(out_shape);
    let data = out.data_mut();
    for o in 0..outer {
        for j in 0..dm {
            let src = &x.data()[(o * dm + j) * inner..(o * dm + j + 1) * inner];
            let dst = &mut data[o * inner..(o + 1) * inner];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    let scale = 1.0 / dm as f64;
    for v in data.iter_mut() {
        *v *= scale;
    }
    out
}

fn eval_concat(parts: &[&Tensor], axis: usize, out_shape: &[usize]) -> Tensor {
    let outer: usize = out_shape[..axis].iter().product();
    let inner: usize = out_shape[axis + 1..].iter().product();
    let total_axis = out_shape[axis];
    let mut out = Tensor::zeros(out_shape);
    let data = out.data_mut();
    for o in 0..outer {
        let mut offset = 0usize;
        for part in parts {
            let width = part.shape()[axis] * inner;
            let src = &part.data()[o * width..(o + 1) * width];
            data[o * total_axis * inner + offset..][..width].copy_from_slice(src);
            offset += width;
        }
    }
    out
}

fn eval_gather_tokens(x: &Tensor, indices: &TokenSel) -> Tensor {
    let (b, t, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let k = indices.count();
    let mut out = Tensor::zeros(&[b, k, d]);
    let data = out.data_mut();
    for bi in 0..b {
        for (ki, &src) in indices.row(bi).iter().enumerate() {
            data[(bi * k + ki) * d..(bi * k + ki + 1) * d]
                .copy_from_slice(&x.data()[(bi * t + src) * d..(bi * t + src + 1) * d]);
        }
    }
    out
}

fn eval_scatter_tokens(x: &Tensor, indices: &TokenSel, slots: usize) -> Tensor {
    let (b, k, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = Tensor::zeros(&[b, slots, d]);
    let data = out.data_mut();
    for bi in 0..b {
        for (ki, &dst) in indices.row(bi).iter().enumerate() {
            data[(bi * slots + dst) * d..(bi * slots + dst + 1) * d]
                .copy_from_slice(&x.data()[(bi * k + ki) * d..(bi * k + ki + 1) * d]);
        }
    }
    out
}

fn eval_slice_last(x: &Tensor, start: usize, len: usize) -> Tensor {
    let d = *x.shape().last().unwrap();
    let rows = x.len() / d;
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = len;
    let mut out = Tensor::zeros(&shape);
    let data = out.data_mut();
    for r in 0..rows {
        data[r * len..(r + 1) * len].copy_from_slice(&x.data()[r * d + start..r * d + start + len]);
    }
    out
}

pub(crate) fn eval_permute(x: &Tensor, axes: &[usize], out_shape: &[usize]) -> Tensor {
    let in_strides = x.strides();
    let out_strides = strides_of(out_shape);
    let rank = axes.len();
    let mut out = Tensor::zeros(out_shape);
    let data = out.data_mut();
    // Walk the input linearly, computing where each element lands.
    let mut coords = vec![0usize; rank];
    for (i, v) in x.data().iter().enumerate() {
        let mut rem = i;
        for (c, s) in coords.iter_mut().zip(&in_strides) {
            *c = rem / s;
            rem %= s;
        }
        let mut o = 0usize;
        for (j, &ax) in axes.iter().enumerate() {
            o += coords[ax] * out_strides[j];
        }
        data[o] = *v;
    }
    out
}
