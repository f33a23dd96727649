//! The recorded computation graph.
//!
//! Operations evaluate eagerly when recorded; the tape keeps enough
//! context (op kind, input handles, seeds, saved activations) to replay
//! the whole forward pass bit-for-bit and to run reverse-mode
//! backpropagation from any scalar node.

use super::kernels::{ConvDims, ConvTDims};
use super::ops::{BnStats, DropKind, Op, TokenSel, ValueSource};
use super::{Result, Tensor, TensorError};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) value: Tensor,
    pub(crate) requires_grad: bool,
    pub(crate) grad: Option<Vec<f64>>,
}

/// Sized view over the prefix of the tape, for op evaluation.
struct TapeView<'a>(&'a [Node]);

impl ValueSource for TapeView<'_> {
    fn value_of(&self, id: NodeId) -> &Tensor {
        &self.0[id.0].value
    }
    fn needs_grad(&self, id: NodeId) -> bool {
        self.0[id.0].requires_grad
    }
}

/// Append-only tape of recorded operations.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Binds a constant leaf (no gradient).
    pub fn leaf(&mut self, value: Tensor) -> Result<NodeId> {
        self.push_leaf(value, false)
    }

    /// Binds a trainable leaf (participates in gradients).
    pub fn param(&mut self, value: &Tensor) -> Result<NodeId> {
        self.push_leaf(value.clone(), true)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: "leaf" });
        }
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad,
            grad: None,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value.item()
    }

    /// Gradient of the most recent backward pass, if this node received one.
    pub fn grad(&self, id: NodeId) -> Option<Tensor> {
        let node = &self.nodes[id.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape(), g.clone()).expect("grad shape"))
    }

    pub fn grad_slice(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    /// Mutable access to a leaf's data, for rebinding inputs before replay.
    pub fn leaf_data_mut(&mut self, id: NodeId) -> &mut [f64] {
        let node = &mut self.nodes[id.0];
        assert!(matches!(node.op, Op::Leaf), "leaf_data_mut on interior node");
        node.value.data_mut()
    }

    /// Replaces a leaf's value (shape must match).
    pub fn set_leaf(&mut self, id: NodeId, value: Tensor) -> Result<()> {
        let node = &mut self.nodes[id.0];
        assert!(matches!(node.op, Op::Leaf), "set_leaf on interior node");
        if node.value.shape() != value.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "set_leaf",
                lhs: node.value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: "set_leaf" });
        }
        node.value = value;
        Ok(())
    }

    /// Recomputes every node from current leaf values, in tape order.
    pub fn replay(&mut self) {
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            let shape = node.value.shape().to_vec();
            node.value = node.op.eval(&TapeView(before), &shape);
        }
    }

    /// Replays the forward pass and returns the value at `root`.
    pub fn forward(&mut self, root: NodeId) -> Tensor {
        self.replay();
        self.nodes[root.0].value.clone()
    }

    /// Backpropagates from a scalar node. Every gradient-requiring leaf
    /// ends up with a gradient; leaves the loss does not depend on get
    /// zeros.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if self.nodes[root.0].value.len() != 1 {
            return Err(TensorError::LossNotScalar {
                shape: self.nodes[root.0].value.shape().to_vec(),
            });
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[root.0].grad = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            if self.nodes[i].grad.is_none() {
                continue;
            }
            let gout = self.nodes[i].grad.take().expect("checked above");
            let deltas = {
                let (before, rest) = self.nodes.split_at_mut(i);
                let node = &rest[0];
                node.op.adjoint(&TapeView(before), &node.value, &gout)
            };
            self.nodes[i].grad = Some(gout);
            for (id, delta) in deltas {
                let node = &mut self.nodes[id.0];
                debug_assert_eq!(delta.len(), node.value.len());
                match &mut node.grad {
                    Some(g) => {
                        for (gv, dv) in g.iter_mut().zip(&delta) {
                            *gv += dv;
                        }
                    }
                    None => node.grad = Some(delta),
                }
            }
        }
        // Leaves outside the loss subtree still get a (zero) gradient.
        for node in &mut self.nodes {
            if node.requires_grad && node.grad.is_none() {
                node.grad = Some(vec![0.0; node.value.len()]);
            }
        }
        Ok(())
    }

    fn push(&mut self, op: Op, out_shape: Vec<usize>) -> NodeId {
        let mut op = op;
        let requires_grad = op.inputs().iter().any(|id| self.nodes[id.0].requires_grad);
        let value = op.eval(&TapeView(&self.nodes), &out_shape);
        debug_assert_eq!(value.shape(), &out_shape[..]);
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
            grad: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn shape_of(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    // -- builders ----------------------------------------------------------

    /// Matrix product over the last two axes. `b` is either rank 2
    /// (shared across leading axes of `a`) or has identical leading axes.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.shape_of(a).to_vec();
        let sb = self.shape_of(b).to_vec();
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch());
        }
        let k = sa[sa.len() - 1];
        if sb[sb.len() - 2] != k {
            return Err(mismatch());
        }
        if sb.len() > 2 && sb[..sb.len() - 2] != sa[..sa.len() - 2] {
            return Err(mismatch());
        }
        let mut out = sa[..sa.len() - 2].to_vec();
        out.push(sa[sa.len() - 2]);
        out.push(sb[sb.len() - 1]);
        Ok(self.push(Op::Matmul { a, b }, out))
    }

    /// Elementwise sum; `b` may also be a suffix shape of `a`, broadcast
    /// over the leading axes (used for biases and position tables).
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.shape_of(a).to_vec();
        let sb = self.shape_of(b).to_vec();
        let suffix_ok = sb.len() <= sa.len() && sa[sa.len() - sb.len()..] == sb[..];
        if !suffix_ok {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                lhs: sa,
                rhs: sb,
            });
        }
        Ok(self.push(Op::Add { a, b }, sa))
    }

    /// Elementwise product of same-shape tensors.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.shape_of(a).to_vec();
        if sa != self.shape_of(b) {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                lhs: sa,
                rhs: self.shape_of(b).to_vec(),
            });
        }
        Ok(self.push(Op::Mul { a, b }, sa))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let shape = self.shape_of(a).to_vec();
        self.push(Op::Scale { a, c }, shape)
    }

    /// a - b, composed from scale and add.
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let neg = self.scale(b, -1.0);
        self.add(a, neg)
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let si = self.shape_of(input).to_vec();
        let sk = self.shape_of(kernel).to_vec();
        let mismatch = || TensorError::ShapeMismatch {
            op: "conv2d",
            lhs: si.clone(),
            rhs: sk.clone(),
        };
        if si.len() != 4 || sk.len() != 4 || si[1] != sk[1] {
            return Err(mismatch());
        }
        let h_out = ConvDims::out_extent(si[2], sk[2], stride, padding).ok_or_else(|| TensorError::InvalidShape {
            op: "conv2d",
            shape: si.clone(),
            reason: format!("kernel {}x{} larger than padded input", sk[2], sk[3]),
        })?;
        let w_out = ConvDims::out_extent(si[3], sk[3], stride, padding).ok_or_else(|| TensorError::InvalidShape {
            op: "conv2d",
            shape: si.clone(),
            reason: format!("kernel {}x{} larger than padded input", sk[2], sk[3]),
        })?;
        if let Some(b) = bias {
            if self.shape_of(b) != [sk[0]] {
                return Err(TensorError::ShapeMismatch {
                    op: "conv2d",
                    lhs: vec![sk[0]],
                    rhs: self.shape_of(b).to_vec(),
                });
            }
        }
        let dims = ConvDims {
            batch: si[0],
            c_in: si[1],
            h: si[2],
            w: si[3],
            c_out: sk[0],
            kh: sk[2],
            kw: sk[3],
            stride,
            padding,
            h_out,
            w_out,
        };
        let out = vec![si[0], sk[0], h_out, w_out];
        Ok(self.push(Op::Conv2d { input, kernel, bias, dims }, out))
    }

    pub fn conv_transpose2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<NodeId> {
        let si = self.shape_of(input).to_vec();
        let sk = self.shape_of(kernel).to_vec();
        let mismatch = || TensorError::ShapeMismatch {
            op: "conv_transpose2d",
            lhs: si.clone(),
            rhs: sk.clone(),
        };
        if si.len() != 4 || sk.len() != 4 || si[1] != sk[0] {
            return Err(mismatch());
        }
        let h_out =
            ConvTDims::out_extent(si[2], sk[2], stride, padding, output_padding).ok_or_else(|| {
                TensorError::InvalidShape {
                    op: "conv_transpose2d",
                    shape: si.clone(),
                    reason: "padding exceeds grown extent".into(),
                }
            })?;
        let w_out =
            ConvTDims::out_extent(si[3], sk[3], stride, padding, output_padding).ok_or_else(|| {
                TensorError::InvalidShape {
                    op: "conv_transpose2d",
                    shape: si.clone(),
                    reason: "padding exceeds grown extent".into(),
                }
            })?;
        if let Some(b) = bias {
            if self.shape_of(b) != [sk[1]] {
                return Err(TensorError::ShapeMismatch {
                    op: "conv_transpose2d",
                    lhs: vec![sk[1]],
                    rhs: self.shape_of(b).to_vec(),
                });
            }
        }
        let dims = ConvTDims {
            batch: si[0],
            c_in: si[1],
            h: si[2],
            w: si[3],
            c_out: sk[1],
            kh: sk[2],
            kw: sk[3],
            stride,
            padding,
            output_padding,
            h_out,
            w_out,
        };
        let out = vec![si[0], sk[1], h_out, w_out];
        Ok(self.push(Op::ConvTranspose2d { input, kernel, bias, dims }, out))
    }

    /// Square-window max pooling. Gradient routes to the first (row-major)
    /// maximum of each window.
    pub fn maxpool2d(&mut self, input: NodeId, window: usize, stride: usize, padding: usize) -> Result<NodeId> {
        let si = self.shape_of(input).to_vec();
        if si.len() != 4 {
            return Err(TensorError::InvalidShape {
                op: "maxpool2d",
                shape: si,
                reason: "expected rank-4 input".into(),
            });
        }
        if padding >= window {
            return Err(TensorError::InvalidShape {
                op: "maxpool2d",
                shape: si,
                reason: "padding must be smaller than the window".into(),
            });
        }
        let h_out = ConvDims::out_extent(si[2], window, stride, padding).ok_or_else(|| TensorError::InvalidShape {
            op: "maxpool2d",
            shape: si.clone(),
            reason: "window larger than padded input".into(),
        })?;
        let w_out = ConvDims::out_extent(si[3], window, stride, padding).ok_or_else(|| TensorError::InvalidShape {
            op: "maxpool2d",
            shape: si.clone(),
            reason: "window larger than padded input".into(),
        })?;
        let out = vec![si[0], si[1], h_out, w_out];
        Ok(self.push(
            Op::MaxPool2d {
                input,
                window,
                stride,
                padding,
                argmax: Vec::new(),
            },
            out,
        ))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let shape = self.shape_of(a).to_vec();
        self.push(Op::Relu { a }, shape)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let shape = self.shape_of(a).to_vec();
        self.push(Op::Tanh { a }, shape)
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let shape = self.shape_of(a).to_vec();
        self.push(Op::Gelu { a }, shape)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let shape = self.shape_of(a).to_vec();
        self.push(Op::Softmax { a }, shape)
    }

    /// Numerically stable log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: NodeId) -> NodeId {
        let shape = self.shape_of(a).to_vec();
        self.push(Op::LogSoftmax { a }, shape)
    }

    /// Normalization over the last axis with learned affine parameters.
    pub fn layer_norm(&mut self, a: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> Result<NodeId> {
        let sa = self.shape_of(a).to_vec();
        let d = *sa.last().ok_or_else(|| TensorError::InvalidShape {
            op: "layer_norm",
            shape: sa.clone(),
            reason: "rank-0 input".into(),
        })?;
        for id in [gain, bias] {
            if self.shape_of(id) != [d] {
                return Err(TensorError::ShapeMismatch {
                    op: "layer_norm",
                    lhs: vec![d],
                    rhs: self.shape_of(id).to_vec(),
                });
            }
        }
        Ok(self.push(
            Op::LayerNorm {
                a,
                gain,
                bias,
                eps,
                inv_std: Vec::new(),
                normed: Vec::new(),
            },
            sa,
        ))
    }

    /// Batch normalization using batch statistics (training mode).
    /// Rank-2 input normalizes per feature, rank-4 per channel.
    pub fn batch_norm_train(&mut self, a: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> Result<NodeId> {
        self.batch_norm_impl(a, gain, bias, eps, None)
    }

    /// Batch normalization with frozen statistics (evaluation mode).
    pub fn batch_norm_eval(
        &mut self,
        a: NodeId,
        gain: NodeId,
        bias: NodeId,
        eps: f64,
        mean: &[f64],
        var: &[f64],
    ) -> Result<NodeId> {
        self.batch_norm_impl(a, gain, bias, eps, Some((mean.to_vec(), var.to_vec())))
    }

    fn batch_norm_impl(
        &mut self,
        a: NodeId,
        gain: NodeId,
        bias: NodeId,
        eps: f64,
        frozen: Option<(Vec<f64>, Vec<f64>)>,
    ) -> Result<NodeId> {
        let sa = self.shape_of(a).to_vec();
        let channels = match sa.len() {
            2 => sa[1],
            4 => sa[1],
            _ => {
                return Err(TensorError::InvalidShape {
                    op: "batch_norm",
                    shape: sa,
                    reason: "expected rank-2 or rank-4 input".into(),
                })
            }
        };
        for id in [gain, bias] {
            if self.shape_of(id) != [channels] {
                return Err(TensorError::ShapeMismatch {
                    op: "batch_norm",
                    lhs: vec![channels],
                    rhs: self.shape_of(id).to_vec(),
                });
            }
        }
        let stats = match frozen {
            Some((mean, var)) => BnStats::Eval { mean, var },
            None => BnStats::Train {
                mean: Vec::new(),
                var: Vec::new(),
            },
        };
        Ok(self.push(Op::BatchNorm { a, gain, bias, eps, stats }, sa))
    }

    /// Batch statistics computed by a training-mode batch_norm node.
    pub fn batch_norm_stats(&self, id: NodeId) -> Option<(&[f64], &[f64])> {
        match &self.nodes[id.0].op {
            Op::BatchNorm {
                stats: BnStats::Train { mean, var },
                ..
            } => Some((mean, var)),
            _ => None,
        }
    }

    /// Inverted dropout: kept activations scale by 1/(1-p). The mask is a
    /// pure function of the seed, so replays are exact.
    pub fn dropout(&mut self, a: NodeId, p: f64, seed: u64, kind: DropKind) -> Result<NodeId> {
        let shape = self.shape_of(a).to_vec();
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::InvalidShape {
                op: "dropout",
                shape,
                reason: format!("p = {p} outside [0, 1)"),
            });
        }
        if kind == DropKind::Channel && shape.len() != 4 {
            return Err(TensorError::InvalidShape {
                op: "dropout",
                shape,
                reason: "channel dropout expects rank-4 input".into(),
            });
        }
        Ok(self.push(Op::Dropout { a, p, seed, kind }, shape))
    }

    /// Stochastic depth: zeroes whole samples (axis 0), scaling survivors.
    pub fn drop_path(&mut self, a: NodeId, p: f64, seed: u64) -> Result<NodeId> {
        let shape = self.shape_of(a).to_vec();
        if !(0.0..1.0).contains(&p) || shape.is_empty() {
            return Err(TensorError::InvalidShape {
                op: "drop_path",
                shape,
                reason: format!("p = {p} outside [0, 1) or rank-0 input"),
            });
        }
        Ok(self.push(Op::DropPath { a, p, seed }, shape))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let want: usize = shape.iter().product();
        if want != self.nodes[a.0].value.len() {
            return Err(TensorError::InvalidShape {
                op: "reshape",
                shape: shape.to_vec(),
                reason: format!("product {} != input length {}", want, self.nodes[a.0].value.len()),
            });
        }
        Ok(self.push(
            Op::Reshape {
                a,
                shape: shape.to_vec(),
            },
            shape.to_vec(),
        ))
    }

    pub fn mean_over_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let sa = self.shape_of(a).to_vec();
        if axis >= sa.len() {
            return Err(TensorError::IndexOutOfRange {
                op: "mean_over_axis",
                index: axis,
                bound: sa.len(),
            });
        }
        let mut out = sa.clone();
        out.remove(axis);
        Ok(self.push(Op::MeanOverAxis { a, axis }, out))
    }

    /// Mean over every element, yielding a rank-0 scalar.
    pub fn mean_all(&mut self, a: NodeId) -> Result<NodeId> {
        let len = self.nodes[a.0].value.len();
        let flat = self.reshape(a, &[len])?;
        self.mean_over_axis(flat, 0)
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(TensorError::InvalidShape {
                op: "concat",
                shape: vec![],
                reason: "no parts".into(),
            });
        }
        let first = self.shape_of(parts[0]).to_vec();
        if axis >= first.len() {
            return Err(TensorError::IndexOutOfRange {
                op: "concat",
                index: axis,
                bound: first.len(),
            });
        }
        let mut axis_total = 0usize;
        for p in parts {
            let sp = self.shape_of(*p);
            if sp.len() != first.len() {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first,
                    rhs: sp.to_vec(),
                });
            }
            for (i, (x, y)) in first.iter().zip(sp).enumerate() {
                if i != axis && x != y {
                    return Err(TensorError::ShapeMismatch {
                        op: "concat",
                        lhs: first.clone(),
                        rhs: sp.to_vec(),
                    });
                }
            }
            axis_total += sp[axis];
        }
        let mut out = first;
        out[axis] = axis_total;
        Ok(self.push(
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            out,
        ))
    }

    /// Selects tokens (axis 1 of a rank-3 tensor) by index, the same
    /// set for every batch row.
    pub fn gather_tokens(&mut self, a: NodeId, indices: &[usize]) -> Result<NodeId> {
        self.gather_tokens_sel(a, TokenSel::Shared(indices.to_vec()))
    }

    /// Per-row token selection (each batch row has its own index set, all
    /// of equal length).
    pub fn gather_tokens_rows(&mut self, a: NodeId, rows: Vec<Vec<usize>>) -> Result<NodeId> {
        self.gather_tokens_sel(a, TokenSel::PerRow(rows))
    }

    fn gather_tokens_sel(&mut self, a: NodeId, indices: TokenSel) -> Result<NodeId> {
        let sa = self.shape_of(a).to_vec();
        if sa.len() != 3 {
            return Err(TensorError::InvalidShape {
                op: "gather_tokens",
                shape: sa,
                reason: "expected rank-3 (batch, tokens, dim)".into(),
            });
        }
        if let Some(rows) = indices.rows() {
            if rows != sa[0] {
                return Err(TensorError::InvalidShape {
                    op: "gather_tokens",
                    shape: sa.clone(),
                    reason: format!("{rows} index rows for batch {}", sa[0]),
                });
            }
        }
        let k = indices.count();
        for b in 0..sa[0] {
            let row = indices.row(b);
            if row.len() != k {
                return Err(TensorError::InvalidShape {
                    op: "gather_tokens",
                    shape: sa.clone(),
                    reason: "ragged per-row index sets".into(),
                });
            }
            for &i in row {
                if i >= sa[1] {
                    return Err(TensorError::IndexOutOfRange {
                        op: "gather_tokens",
                        index: i,
                        bound: sa[1],
                    });
                }
            }
        }
        let out = vec![sa[0], k, sa[2]];
        Ok(self.push(Op::GatherTokens { a, indices }, out))
    }

    /// Places tokens into a `slots`-wide grid at the given distinct
    /// positions (shared across the batch); other slots are zero.
    pub fn scatter_tokens(&mut self, a: NodeId, indices: &[usize], slots: usize) -> Result<NodeId> {
        self.scatter_tokens_sel(a, TokenSel::Shared(indices.to_vec()), slots)
    }

    /// Per-row token placement.
    pub fn scatter_tokens_rows(&mut self, a: NodeId, rows: Vec<Vec<usize>>, slots: usize) -> Result<NodeId> {
        self.scatter_tokens_sel(a, TokenSel::PerRow(rows), slots)
    }

    fn scatter_tokens_sel(&mut self, a: NodeId, indices: TokenSel, slots: usize) -> Result<NodeId> {
        let sa = self.shape_of(a).to_vec();
        if sa.len() != 3 || sa[1] != indices.count() {
            return Err(TensorError::InvalidShape {
                op: "scatter_tokens",
                shape: sa,
                reason: format!("expected rank-3 with {} tokens", indices.count()),
            });
        }
        if let Some(rows) = indices.rows() {
            if rows != sa[0] {
                return Err(TensorError::InvalidShape {
                    op: "scatter_tokens",
                    shape: sa.clone(),
                    reason: format!("{rows} index rows for batch {}", sa[0]),
                });
            }
        }
        for b in 0..sa[0] {
            let mut seen = vec![false; slots];
            for &i in indices.row(b) {
                if i >= slots {
                    return Err(TensorError::IndexOutOfRange {
                        op: "scatter_tokens",
                        index: i,
                        bound: slots,
                    });
                }
                if seen[i] {
                    return Err(TensorError::InvalidShape {
                        op: "scatter_tokens",
                        shape: sa.clone(),
                        reason: format!("duplicate target slot {i}"),
                    });
                }
                seen[i] = true;
            }
        }
        let out = vec![sa[0], slots, sa[2]];
        Ok(self.push(Op::ScatterTokens { a, indices, slots }, out))
    }

    /// Picks one element per row of a rank-2 tensor: out[b] = a[b, labels[b]].
    pub fn gather_labels(&mut self, a: NodeId, labels: &[usize]) -> Result<NodeId> {
        let sa = self.shape_of(a).to_vec();
        if sa.len() != 2 || sa[0] != labels.len() {
            return Err(TensorError::InvalidShape {
                op: "gather_labels",
                shape: sa,
                reason: format!("expected ({}, classes)", labels.len()),
            });
        }
        for &l in labels {
            if l >= sa[1] {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather_labels",
                    index: l,
                    bound: sa[1],
                });
            }
        }
        Ok(self.push(
            Op::GatherLabels {
                a,
                labels: labels.to_vec(),
            },
            vec![sa[0]],
        ))
    }

    /// Contiguous slice along the last axis.
    pub fn slice_last(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let sa = self.shape_of(a).to_vec();
        let d = *sa.last().ok_or_else(|| TensorError::InvalidShape {
            op: "slice_last",
            shape: sa.clone(),
            reason: "rank-0 input".into(),
        })?;
        if start + len > d || len == 0 {
            return Err(TensorError::IndexOutOfRange {
                op: "slice_last",
                index: start + len,
                bound: d,
            });
        }
        let mut out = sa;
        *out.last_mut().unwrap() = len;
        Ok(self.push(Op::SliceLast { a, start, len }, out))
    }

    /// Reorders axes; `axes` must be a permutation of 0..rank.
    pub fn permute(&mut self, a: NodeId, axes: &[usize]) -> Result<NodeId> {
        let sa = self.shape_of(a).to_vec();
        let mut seen = vec![false; sa.len()];
        if axes.len() != sa.len() {
            return Err(TensorError::InvalidShape {
                op: "permute",
                shape: sa,
                reason: format!("axes {axes:?} do not cover rank"),
            });
        }
        for &ax in axes {
            if ax >= sa.len() || seen[ax] {
                return Err(TensorError::InvalidShape {
                    op: "permute",
                    shape: sa,
                    reason: format!("axes {axes:?} are not a permutation"),
                });
            }
            seen[ax] = true;
        }
        let out: Vec<usize> = axes.iter().map(|&ax| sa[ax]).collect();
        Ok(self.push(
            Op::Permute {
                a,
                axes: axes.to_vec(),
            },
            out,
        ))
    }

    /// Op-kind name of a node (handy in error reports and tests).
    pub fn op_name(&self, id: NodeId) -> &'static str {
        self.nodes[id.0].op.name()
    }
}
