//! Parameterized layers, loss functions, and the Adam optimizer.
//!
//! Layers own their parameters as plain [`Tensor`] values. Each training
//! iteration binds them onto a fresh [`Graph`] (recording the node ids in
//! a [`Binds`] list), runs backward, and applies optimizer updates by
//! zipping the binds with the module's canonical parameter order.

mod adam;
mod losses;

pub use adam::AdamState;
pub use losses::{cross_entropy_loss, masked_mse_loss, mse_loss};

use crate::rng::derive_seed;
use crate::tensor::{DropKind, Graph, NodeId, Tensor, TensorError};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("masked loss needs at least one masked element")]
    EmptyMask,
    #[error("non-finite gradient for parameter {param}")]
    NonFiniteGradient { param: String },
}

pub type Result<T> = std::result::Result<T, NnError>;

/// Per-pass forward context: evaluation vs training, plus the seed stream
/// for stochastic layers.
#[derive(Debug, Clone)]
pub struct FwdCtx {
    pub training: bool,
    seed: u64,
    counter: u64,
}

impl FwdCtx {
    pub fn eval() -> Self {
        Self {
            training: false,
            seed: 0,
            counter: 0,
        }
    }

    pub fn train(seed: u64) -> Self {
        Self {
            training: true,
            seed,
            counter: 0,
        }
    }

    /// Fresh seed for the next stochastic op in this pass.
    pub fn next_seed(&mut self) -> u64 {
        self.counter += 1;
        derive_seed(self.seed, &[self.counter])
    }
}

/// Parameter bindings recorded during one forward pass: canonical name
/// plus the graph node carrying the parameter value.
#[derive(Debug, Default)]
pub struct Binds {
    pub entries: Vec<(String, NodeId)>,
}

impl Binds {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: String, id: NodeId) {
        self.entries.push((name, id));
    }
}

/// Anything owning named parameters (and possibly non-trainable buffers).
pub trait Module {
    fn for_each_param(&self, f: &mut dyn FnMut(&str, &Tensor));
    fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor));
    fn for_each_buffer(&self, _f: &mut dyn FnMut(&str, &Tensor)) {}
    fn for_each_buffer_mut(&mut self, _f: &mut dyn FnMut(&str, &mut Tensor)) {}

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.for_each_param(&mut |_, t| n += t.len());
        n
    }
}

/// Applies one Adam step to every parameter of `module`, reading
/// gradients off `graph` through the recorded `binds`.
pub fn adam_apply(module: &mut dyn Module, adam: &mut AdamState, binds: &Binds, graph: &Graph) -> Result<()> {
    adam.begin_step();
    let mut slot = 0usize;
    let mut result = Ok(());
    module.for_each_param_mut(&mut |name, tensor| {
        if result.is_err() {
            return;
        }
        let (bound_name, node) = &binds.entries[slot];
        debug_assert!(
            bound_name.ends_with(name),
            "bind order drifted from parameter order: {bound_name} vs {name}"
        );
        let grad = graph.grad_slice(*node).expect("backward must run before adam_apply");
        result = adam.update(slot, name, tensor, grad);
        slot += 1;
    });
    debug_assert_eq!(slot, binds.entries.len());
    result
}

/// Weight-init scaling. Fan-in-scaled zero-mean normals; biases zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// std = sqrt(2 / fan_in), for relu-family layers.
    ReluFan,
    /// std = sqrt(1 / fan_in).
    LinearFan,
    /// std = 0.02 * sqrt(1 / fan_in), for decoder output layers.
    ///
    /// A full-scale output layer turns the random initial latent into
    /// reconstruction noise whose gradient uniformly suppresses every
    /// active latent unit; with a relu latent that suppression kills the
    /// code before the decoder learns to use it. Starting the output
    /// layer small keeps the early gradients signal-driven.
    OutputFan,
}

impl Init {
    fn std(self, fan_in: usize) -> f64 {
        match self {
            Init::ReluFan => (2.0 / fan_in as f64).sqrt(),
            Init::LinearFan => (1.0 / fan_in as f64).sqrt(),
            Init::OutputFan => 0.02 * (1.0 / fan_in as f64).sqrt(),
        }
    }
}

fn init_tensor(shape: &[usize], fan_in: usize, init: Init, rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    crate::rng::fill_normal(rng, init.std(fan_in), t.data_mut());
    t
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor, // (in, out)
    pub bias: Tensor,   // (out)
}

impl Linear {
    pub fn init(in_dim: usize, out_dim: usize, init: Init, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: init_tensor(&[in_dim, out_dim], in_dim, init, rng),
            bias: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId, scope: &str, binds: &mut Binds) -> Result<NodeId> {
        let w = g.param(&self.weight)?;
        let b = g.param(&self.bias)?;
        binds.push(format!("{scope}.weight"), w);
        binds.push(format!("{scope}.bias"), b);
        let y = g.matmul(x, w)?;
        Ok(g.add(y, b)?)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Tensor, // (c_out, c_in, kh, kw)
    pub bias: Tensor,   // (c_out)
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn init(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        init: Init,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = c_in * kernel * kernel;
        Self {
            weight: init_tensor(&[c_out, c_in, kernel, kernel], fan_in, init, rng),
            bias: Tensor::zeros(&[c_out]),
            stride,
            padding,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId, scope: &str, binds: &mut Binds) -> Result<NodeId> {
        let w = g.param(&self.weight)?;
        let b = g.param(&self.bias)?;
        binds.push(format!("{scope}.weight"), w);
        binds.push(format!("{scope}.bias"), b);
        Ok(g.conv2d(x, w, Some(b), self.stride, self.padding)?)
    }
}

#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub weight: Tensor, // (c_in, c_out, kh, kw)
    pub bias: Tensor,   // (c_out)
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
        init: Init,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = c_in * kernel * kernel;
        Self {
            weight: init_tensor(&[c_in, c_out, kernel, kernel], fan_in, init, rng),
            bias: Tensor::zeros(&[c_out]),
            stride,
            padding,
            output_padding,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId, scope: &str, binds: &mut Binds) -> Result<NodeId> {
        let w = g.param(&self.weight)?;
        let b = g.param(&self.bias)?;
        binds.push(format!("{scope}.weight"), w);
        binds.push(format!("{scope}.bias"), b);
        Ok(g.conv_transpose2d(x, w, Some(b), self.stride, self.padding, self.output_padding)?)
    }
}

/// Batch normalization with running statistics (momentum 0.1, eps 1e-5).
/// Training mode normalizes by batch statistics and refreshes the running
/// averages with the unbiased batch variance; eval mode uses the running
/// averages.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gain: Tensor,
    pub bias: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gain: Tensor::full(&[channels], 1.0),
            bias: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn forward(
        &mut self,
        g: &mut Graph,
        x: NodeId,
        ctx: &FwdCtx,
        scope: &str,
        binds: &mut Binds,
    ) -> Result<NodeId> {
        let gain = g.param(&self.gain)?;
        let bias = g.param(&self.bias)?;
        binds.push(format!("{scope}.gain"), gain);
        binds.push(format!("{scope}.bias"), bias);
        if ctx.training {
            let y = g.batch_norm_train(x, gain, bias, self.eps)?;
            let reduce = {
                let s = g.value(x).shape();
                match s.len() {
                    2 => s[0],
                    _ => s[0] * s[2] * s[3],
                }
            };
            let (mean, var) = g.batch_norm_stats(y).expect("train-mode stats");
            let mean = mean.to_vec();
            let var = var.to_vec();
            // PyTorch convention: running update uses the unbiased variance.
            let unbias = if reduce > 1 { reduce as f64 / (reduce - 1) as f64 } else { 1.0 };
            let m = self.momentum;
            for (r, b) in self.running_mean.data_mut().iter_mut().zip(&mean) {
                *r = (1.0 - m) * *r + m * b;
            }
            for (r, b) in self.running_var.data_mut().iter_mut().zip(&var) {
                *r = (1.0 - m) * *r + m * b * unbias;
            }
            Ok(y)
        } else {
            Ok(g.batch_norm_eval(x, gain, bias, self.eps, self.running_mean.data(), self.running_var.data())?)
        }
    }
}

/// One layer of a sequential stack.
#[derive(Debug, Clone)]
pub enum Layer {
    Flatten,
    Unflatten { c: usize, h: usize, w: usize },
    Linear(Linear),
    Relu,
    Tanh,
    Gelu,
    Conv2d(Conv2d),
    ConvTranspose2d(ConvTranspose2d),
    BatchNorm(BatchNorm),
    MaxPool2d { window: usize, stride: usize, padding: usize },
    Dropout { p: f64, channelwise: bool },
}

/// Ordered layers applied in sequence; parameter names are stable
/// (`<scope>.layers.<index>.<field>`).
#[derive(Debug, Clone, Default)]
pub struct LayerStack {
    pub layers: Vec<Layer>,
}

impl LayerStack {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn forward(
        &mut self,
        g: &mut Graph,
        input: NodeId,
        ctx: &mut FwdCtx,
        scope: &str,
        binds: &mut Binds,
    ) -> Result<NodeId> {
        let mut x = input;
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let name = format!("{scope}.layers.{i}");
            x = match layer {
                Layer::Flatten => {
                    let shape = g.value(x).shape().to_vec();
                    let rest: usize = shape[1..].iter().product();
                    g.reshape(x, &[shape[0], rest])?
                }
                Layer::Unflatten { c, h, w } => {
                    let batch = g.value(x).shape()[0];
                    g.reshape(x, &[batch, *c, *h, *w])?
                }
                Layer::Linear(l) => l.forward(g, x, &name, binds)?,
                Layer::Relu => g.relu(x),
                Layer::Tanh => g.tanh(x),
                Layer::Gelu => g.gelu(x),
                Layer::Conv2d(c) => c.forward(g, x, &name, binds)?,
                Layer::ConvTranspose2d(c) => c.forward(g, x, &name, binds)?,
                Layer::BatchNorm(b) => b.forward(g, x, ctx, &name, binds)?,
                Layer::MaxPool2d { window, stride, padding } => g.maxpool2d(x, *window, *stride, *padding)?,
                Layer::Dropout { p, channelwise } => {
                    if ctx.training && *p > 0.0 {
                        let kind = if *channelwise { DropKind::Channel } else { DropKind::Element };
                        let seed = ctx.next_seed();
                        g.dropout(x, *p, seed, kind)?
                    } else {
                        x
                    }
                }
            };
        }
        Ok(x)
    }
}

impl Module for LayerStack {
    fn for_each_param(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Linear(l) => {
                    f(&format!("layers.{i}.weight"), &l.weight);
                    f(&format!("layers.{i}.bias"), &l.bias);
                }
                Layer::Conv2d(c) => {
                    f(&format!("layers.{i}.weight"), &c.weight);
                    f(&format!("layers.{i}.bias"), &c.bias);
                }
                Layer::ConvTranspose2d(c) => {
                    f(&format!("layers.{i}.weight"), &c.weight);
                    f(&format!("layers.{i}.bias"), &c.bias);
                }
                Layer::BatchNorm(b) => {
                    f(&format!("layers.{i}.gain"), &b.gain);
                    f(&format!("layers.{i}.bias"), &b.bias);
                }
                _ => {}
            }
        }
    }

    fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            match layer {
                Layer::Linear(l) => {
                    f(&format!("layers.{i}.weight"), &mut l.weight);
                    f(&format!("layers.{i}.bias"), &mut l.bias);
                }
                Layer::Conv2d(c) => {
                    f(&format!("layers.{i}.weight"), &mut c.weight);
                    f(&format!("layers.{i}.bias"), &mut c.bias);
                }
                Layer::ConvTranspose2d(c) => {
                    f(&format!("layers.{i}.weight"), &mut c.weight);
                    f(&format!("layers.{i}.bias"), &mut c.bias);
                }
                Layer::BatchNorm(b) => {
                    f(&format!("layers.{i}.gain"), &mut b.gain);
                    f(&format!("layers.{i}.bias"), &mut b.bias);
                }
                _ => {}
            }
        }
    }

    fn for_each_buffer(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for (i, layer) in self.layers.iter().enumerate() {
            if let Layer::BatchNorm(b) = layer {
                f(&format!("layers.{i}.running_mean"), &b.running_mean);
                f(&format!("layers.{i}.running_var"), &b.running_var);
            }
        }
    }

    fn for_each_buffer_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            if let Layer::BatchNorm(b) = layer {
                f(&format!("layers.{i}.running_mean"), &mut b.running_mean);
                f(&format!("layers.{i}.running_var"), &mut b.running_var);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn stack_forward_binds_params_in_canonical_order() {
        let mut rng = rng_from_seed(1);
        let mut stack = LayerStack::new(vec![
            Layer::Flatten,
            Layer::Linear(Linear::init(12, 5, Init::ReluFan, &mut rng)),
            Layer::Relu,
            Layer::Linear(Linear::init(5, 3, Init::LinearFan, &mut rng)),
        ]);
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[2, 3, 2, 2])).unwrap();
        let mut ctx = FwdCtx::eval();
        let mut binds = Binds::new();
        let y = stack.forward(&mut g, x, &mut ctx, "enc", &mut binds).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 3]);
        let bound: Vec<&str> = binds.entries.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(
            bound,
            vec!["enc.layers.1.weight", "enc.layers.1.bias", "enc.layers.3.weight", "enc.layers.3.bias"]
        );
        let mut visited = Vec::new();
        stack.for_each_param(&mut |n, _| visited.push(n.to_string()));
        assert_eq!(
            visited,
            vec!["layers.1.weight", "layers.1.bias", "layers.3.weight", "layers.3.bias"]
        );
    }

    #[test]
    fn param_count_is_reproducible_function_of_config() {
        let mut rng = rng_from_seed(9);
        let stack = LayerStack::new(vec![Layer::Linear(Linear::init(784, 16, Init::ReluFan, &mut rng))]);
        assert_eq!(stack.param_count(), 784 * 16 + 16);
    }

    #[test]
    fn batch_norm_updates_running_stats_only_in_training() {
        let mut bn = BatchNorm::new(3);
        let mut g = Graph::new();
        let x = g
            .leaf(Tensor::new(&[4, 3], (0..12).map(|i| i as f64).collect()).unwrap())
            .unwrap();
        let mut binds = Binds::new();
        let before = bn.running_mean.clone();
        let ctx = FwdCtx::eval();
        bn.forward(&mut g, x, &ctx, "bn", &mut binds).unwrap();
        assert_eq!(bn.running_mean, before);
        let ctx = FwdCtx::train(1);
        bn.forward(&mut g, x, &ctx, "bn", &mut binds).unwrap();
        assert_ne!(bn.running_mean, before);
    }

    #[test]
    fn dropout_layer_is_identity_at_eval() {
        let mut stack = LayerStack::new(vec![Layer::Dropout { p: 0.5, channelwise: false }]);
        let mut g = Graph::new();
        let x_val = Tensor::new(&[2, 4], vec![1.0; 8]).unwrap();
        let x = g.leaf(x_val.clone()).unwrap();
        let mut ctx = FwdCtx::eval();
        let mut binds = Binds::new();
        let y = stack.forward(&mut g, x, &mut ctx, "s", &mut binds).unwrap();
        assert_eq!(g.value(y).data(), x_val.data());
    }
}
