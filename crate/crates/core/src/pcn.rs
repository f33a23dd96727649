//! Reference forward predictive coding network.
//!
//! Every layer holds an activity vector x_l; layer l+1 transmits the
//! prediction u_l = phi(x_{l+1}) W_{l+1}^T downward, and the error
//! e_l = x_l - u_l upward. Inference runs synchronous gradient descent
//! on the energy E = 1/2 sum_l |e_l|^2 over the unclamped activities:
//! clamping the bottom to an image classifies at the top, clamping the
//! top to a label generates at the bottom. Learning descends E with
//! respect to the weights after each inference.

use crate::rng::{derive_seed, fill_normal, rng_from_seed};
use crate::tensor::{kernels, Tensor};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PcnError {
    #[error("energy diverged at iteration {iteration} (E = {energy:.6e} grew for {streak} consecutive steps)")]
    Diverged {
        iteration: usize,
        energy: f64,
        streak: usize,
    },
    #[error("layer {layer} activity has shape {got:?}, expected (batch, {want})")]
    BadShape { layer: usize, got: Vec<usize>, want: usize },
}

pub type Result<T> = std::result::Result<T, PcnError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcnActivation {
    Tanh,
    Identity,
}

impl PcnActivation {
    fn apply(self, x: f64) -> f64 {
        match self {
            PcnActivation::Tanh => x.tanh(),
            PcnActivation::Identity => x,
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            PcnActivation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            PcnActivation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcnMode {
    Classify,
    Generate,
}

/// Layer sizes, weights, and inference hyperparameters.
///
/// With the default init (std 1/sqrt(fan_in), scaled by 0.5) and tanh
/// activation, inference steps up to 0.1 keep the energy non-increasing;
/// the default step stays at 0.05 for margin.
#[derive(Debug, Clone)]
pub struct PcnModel {
    pub dims: Vec<usize>,
    /// weights[i] has shape (dims[i], dims[i+1]) and predicts layer i
    /// from layer i+1.
    pub weights: Vec<Tensor>,
    pub activation: PcnActivation,
    pub step: f64,
    pub max_iters: usize,
    /// Early stop once |dE| falls below this.
    pub tol: f64,
}

impl PcnModel {
    pub fn init(dims: &[usize], activation: PcnActivation, seed: u64) -> Self {
        assert!(dims.len() >= 2, "need at least two layers");
        let mut rng = rng_from_seed(derive_seed(seed, &[0x9c1]));
        let weights = (0..dims.len() - 1)
            .map(|i| {
                let mut w = Tensor::zeros(&[dims[i], dims[i + 1]]);
                let std = 0.5 / (dims[i + 1] as f64).sqrt();
                fill_normal(&mut rng, std, w.data_mut());
                w
            })
            .collect();
        Self {
            dims: dims.to_vec(),
            weights,
            activation,
            step: 0.05,
            max_iters: 200,
            tol: 1e-8,
        }
    }

    pub fn layer_count(&self) -> usize {
        self.dims.len()
    }
}

/// Activities, predictions, errors, and clamp flags for a batch.
#[derive(Debug, Clone)]
pub struct PcnState {
    pub activities: Vec<Tensor>,
    /// predictions[l] targets layer l, for l in 0..L-1.
    pub predictions: Vec<Tensor>,
    /// errors[l] = activities[l] - predictions[l].
    pub errors: Vec<Tensor>,
    pub clamped: Vec<bool>,
    pub batch: usize,
}

impl PcnState {
    /// All-zero activities (the reproducible unbiased start).
    pub fn zeros(model: &PcnModel, batch: usize) -> Self {
        let activities = model.dims.iter().map(|&d| Tensor::zeros(&[batch, d])).collect();
        let predictions = model.dims[..model.dims.len() - 1]
            .iter()
            .map(|&d| Tensor::zeros(&[batch, d]))
            .collect();
        let errors = model.dims[..model.dims.len() - 1]
            .iter()
            .map(|&d| Tensor::zeros(&[batch, d]))
            .collect();
        Self {
            activities,
            predictions,
            errors,
            clamped: vec![false; model.dims.len()],
            batch,
        }
    }

    /// Clamps a layer to fixed values for the whole inference.
    pub fn clamp(&mut self, layer: usize, values: Tensor) -> Result<()> {
        let want = self.activities[layer].shape().to_vec();
        if values.shape() != want {
            return Err(PcnError::BadShape {
                layer,
                got: values.shape().to_vec(),
                want: want[1],
            });
        }
        self.activities[layer] = values;
        self.clamped[layer] = true;
        Ok(())
    }
}

/// Recomputes predictions and errors from the current activities, so
/// that e_l = x_l - u_l holds exactly.
pub fn refresh(model: &PcnModel, state: &mut PcnState) {
    let levels = model.dims.len();
    for l in 0..levels - 1 {
        let upper = &state.activities[l + 1];
        let phi: Vec<f64> = upper.data().iter().map(|&v| model.activation.apply(v)).collect();
        let (b, d_upper) = (state.batch, model.dims[l + 1]);
        let d_this = model.dims[l];
        let mut u = vec![0.0; b * d_this];
        kernels::matmul_nt_acc(&phi, model.weights[l].data(), b, d_upper, d_this, &mut u);
        for ((e, x), (u_slot, u_new)) in state.errors[l]
            .data_mut()
            .iter_mut()
            .zip(state.activities[l].data())
            .zip(state.predictions[l].data_mut().iter_mut().zip(&u))
        {
            *u_slot = *u_new;
            *e = x - u_new;
        }
    }
}

/// Half the sum of squared prediction errors over all predicted layers.
pub fn pcn_energy(state: &PcnState) -> f64 {
    0.5 * state
        .errors
        .iter()
        .map(|e| e.data().iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
}

/// Energy gradient with respect to each layer's activities.
pub fn activity_gradients(model: &PcnModel, state: &PcnState) -> Vec<Tensor> {
    let levels = model.dims.len();
    let mut grads: Vec<Tensor> = state.activities.iter().map(|a| Tensor::zeros(a.shape())).collect();
    for l in 0..levels {
        // Own prediction error pushes x_l toward u_l.
        if l < levels - 1 {
            for (gv, ev) in grads[l].data_mut().iter_mut().zip(state.errors[l].data()) {
                *gv += ev;
            }
        }
        // Being the predictor of layer l-1 pulls x_l to explain e_{l-1}.
        if l > 0 {
            let (b, d_lower, d_this) = (state.batch, model.dims[l - 1], model.dims[l]);
            let mut back = vec![0.0; b * d_this];
            kernels::matmul_nn(
                state.errors[l - 1].data(),
                model.weights[l - 1].data(),
                b,
                d_lower,
                d_this,
                &mut back,
            );
            for ((gv, xv), bv) in grads[l]
                .data_mut()
                .iter_mut()
                .zip(state.activities[l].data())
                .zip(&back)
            {
                *gv -= model.activation.derivative(*xv) * bv;
            }
        }
    }
    grads
}

/// Energy gradient with respect to each weight matrix.
pub fn weight_gradients(model: &PcnModel, state: &PcnState) -> Vec<Tensor> {
    let levels = model.dims.len();
    let mut grads = Vec::with_capacity(levels - 1);
    for l in 0..levels - 1 {
        let (b, d_this, d_upper) = (state.batch, model.dims[l], model.dims[l + 1]);
        let phi: Vec<f64> = state.activities[l + 1]
            .data()
            .iter()
            .map(|&v| model.activation.apply(v))
            .collect();
        let mut dw = Tensor::zeros(&[d_this, d_upper]);
        // dE/dW_l = -e_l^T phi(x_{l+1})
        kernels::matmul_tn_acc(state.errors[l].data(), &phi, d_this, b, d_upper, dw.data_mut());
        for v in dw.data_mut() {
            *v = -*v;
        }
        grads.push(dw);
    }
    grads
}

/// Synchronous inference: all activity gradients are computed from the
/// current state, then applied together. Returns the energy after each
/// iteration (index 0 is the initial refreshed energy).
pub fn pcn_infer(model: &PcnModel, state: &mut PcnState) -> Result<Vec<f64>> {
    refresh(model, state);
    let mut energies = vec![pcn_energy(state)];
    let mut grow_streak = 0usize;
    for iter in 0..model.max_iters {
        let grads = activity_gradients(model, state);
        for (l, grad) in grads.iter().enumerate() {
            if state.clamped[l] {
                continue;
            }
            for (x, gv) in state.activities[l].data_mut().iter_mut().zip(grad.data()) {
                *x -= model.step * gv;
            }
        }
        refresh(model, state);
        let e = pcn_energy(state);
        let prev = *energies.last().expect("non-empty");
        if e > prev {
            grow_streak += 1;
            if grow_streak >= 10 {
                return Err(PcnError::Diverged {
                    iteration: iter,
                    energy: e,
                    streak: grow_streak,
                });
            }
        } else {
            grow_streak = 0;
        }
        let delta = (e - prev).abs();
        energies.push(e);
        if delta < model.tol {
            break;
        }
    }
    Ok(energies)
}

/// Clamp-bottom inference; the class is the argmax of the top layer.
pub fn pcn_classify(model: &PcnModel, images: &Tensor) -> Result<Vec<usize>> {
    let batch = images.shape()[0];
    let mut state = PcnState::zeros(model, batch);
    state.clamp(0, images.clone())?;
    pcn_infer(model, &mut state)?;
    let top = state.activities.last().expect("layers");
    let d = *model.dims.last().expect("dims");
    Ok((0..batch)
        .map(|b| {
            let row = &top.data()[b * d..(b + 1) * d];
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite"))
                .map(|(i, _)| i)
                .unwrap_or(0)
        })
        .collect())
}

/// Clamp-top inference; returns the generated bottom-layer activity.
pub fn pcn_generate(model: &PcnModel, labels_onehot: &Tensor) -> Result<Tensor> {
    let batch = labels_onehot.shape()[0];
    let mut state = PcnState::zeros(model, batch);
    let top = model.dims.len() - 1;
    state.clamp(top, labels_onehot.clone())?;
    pcn_infer(model, &mut state)?;
    Ok(state.activities[0].clone())
}

/// Clamp both ends, infer the hidden layers, then take one energy
/// descent step on every weight matrix (mean gradient over the batch).
pub fn pcn_learn(
    model: &mut PcnModel,
    inputs: &Tensor,
    targets_onehot: &Tensor,
    epochs: usize,
    learning_rate: f64,
    batch_size: usize,
    seed: u64,
) -> Result<()> {
    let n = inputs.shape()[0];
    let top = model.dims.len() - 1;
    let d_in = model.dims[0];
    let d_out = model.dims[top];
    for epoch in 0..epochs {
        let batches = crate::data::batch_indices(n, batch_size, Some(derive_seed(seed, &[epoch as u64])));
        for idx in batches {
            let b = idx.len();
            let mut x0 = Tensor::zeros(&[b, d_in]);
            let mut xt = Tensor::zeros(&[b, d_out]);
            for (row, &i) in idx.iter().enumerate() {
                x0.data_mut()[row * d_in..(row + 1) * d_in]
                    .copy_from_slice(&inputs.data()[i * d_in..(i + 1) * d_in]);
                xt.data_mut()[row * d_out..(row + 1) * d_out]
                    .copy_from_slice(&targets_onehot.data()[i * d_out..(i + 1) * d_out]);
            }
            let mut state = PcnState::zeros(model, b);
            state.clamp(0, x0)?;
            state.clamp(top, xt)?;
            pcn_infer(model, &mut state)?;
            refresh(model, &mut state);
            let grads = weight_gradients(model, &state);
            let scale = learning_rate / b as f64;
            for (w, g) in model.weights.iter_mut().zip(&grads) {
                for (wv, gv) in w.data_mut().iter_mut().zip(g.data()) {
                    *wv -= scale * gv;
                }
            }
        }
    }
    Ok(())
}

/// Two linearly separable 2-D blobs with one-hot targets, for demos and
/// verification.
pub fn toy_two_class(per_class: usize, seed: u64) -> (Tensor, Tensor, Vec<usize>) {
    let mut rng = rng_from_seed(seed);
    let n = per_class * 2;
    let mut inputs = Tensor::zeros(&[n, 2]);
    let mut targets = Tensor::zeros(&[n, 2]);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 2;
        let (cx, cy) = if class == 0 { (-1.0, -0.8) } else { (1.0, 0.8) };
        let mut noise = [0.0; 2];
        fill_normal(&mut rng, 0.35, &mut noise);
        inputs.data_mut()[i * 2] = cx + noise[0];
        inputs.data_mut()[i * 2 + 1] = cy + noise[1];
        targets.data_mut()[i * 2 + class] = 1.0;
        labels.push(class);
    }
    (inputs, targets, labels)
}
