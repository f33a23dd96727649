//! PCA and fixed random-projection representations, plus classifier and
//! decoder heads trained on top of them.
//!
//! These benchmark what a frozen linear representation supports: the
//! projection never updates while a head trains on it.

use crate::data::Dataset;
use crate::nn::{adam_apply, cross_entropy_loss, mse_loss, AdamState, Binds, FwdCtx, Init, Layer, LayerStack, Linear, NnError};
use crate::rng::{derive_seed, fill_normal, rng_from_seed};
use crate::tensor::{kernels, Graph, Tensor, TensorError};
use crate::zoo::{ContainerHeader, ContainerKind, Family, MaskingMode, SizeClass};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("fit_pca needs n <= d (got n = {n}, d = {d})")]
    TooManyComponents { n: usize, d: usize },
    #[error("fit_pca needs at least n samples (got N = {samples}, n = {n})")]
    TooFewSamples { samples: usize, n: usize },
    #[error("dimension mismatch: projection expects {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Zoo(#[from] crate::zoo::ZooError),
}

pub type Result<T> = std::result::Result<T, BaselineError>;

/// Top-n principal axes of a training set.
#[derive(Debug, Clone)]
pub struct PcaBasis {
    pub mean: Tensor,       // (d)
    pub components: Tensor, // (n, d), rows orthonormal
    pub eigenvalues: Vec<f64>,
}

/// A fixed seeded projection: entries N(0, 1) / sqrt(d), immutable after
/// construction.
#[derive(Debug, Clone)]
pub struct RandomProjection {
    pub matrix: Tensor, // (n, d)
    pub seed: u64,
}

fn flatten_view(images: &Tensor) -> (usize, usize) {
    let n = images.shape()[0];
    (n, images.len() / n)
}

/// Sample covariance times (N-1), as a dense (d, d) matrix, plus mean.
fn scatter_matrix(data: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = flatten_view(data);
    let mut mean = vec![0.0; d];
    for row in data.data().chunks(d) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut centered = data.data().to_vec();
    for row in centered.chunks_mut(d) {
        for (v, m) in row.iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let mut scatter = vec![0.0; d * d];
    kernels::matmul_tn_acc(&centered, &centered, d, n, d, &mut scatter);
    (scatter, mean)
}

/// Fits the top-n principal components by power iteration with
/// deflation. Iteration stops once successive eigenvector estimates
/// agree to 1e-10 in angle, or after 10,000 iterations.
pub fn fit_pca(data: &Tensor, n: usize) -> Result<PcaBasis> {
    let (samples, d) = flatten_view(data);
    if n > d {
        return Err(BaselineError::TooManyComponents { n, d });
    }
    if samples < n.max(2) {
        return Err(BaselineError::TooFewSamples { samples, n });
    }
    let (mut scatter, mean) = scatter_matrix(data);
    let denom = (samples - 1) as f64;
    for v in scatter.iter_mut() {
        *v /= denom;
    }

    let mut components = Tensor::zeros(&[n, d]);
    let mut eigenvalues = Vec::with_capacity(n);
    let mut rng = rng_from_seed(0x9CA5EED);
    let mut top_eigenvalue = 0.0_f64;
    for comp in 0..n {
        let mut v = vec![0.0; d];
        fill_normal(&mut rng, 1.0, &mut v);
        normalize(&mut v);
        let mut prev = v.clone();
        for _ in 0..10_000 {
            let mut next = vec![0.0; d];
            kernels::matmul_nn(&scatter, &v, d, d, 1, &mut next);
            // Keep the iterate orthogonal to what's already extracted.
            for found in 0..comp {
                let row = &components.data()[found * d..(found + 1) * d];
                let dot: f64 = next.iter().zip(row).map(|(a, b)| a * b).sum();
                for (nv, rv) in next.iter_mut().zip(row) {
                    *nv -= dot * rv;
                }
            }
            let norm = normalize(&mut next);
            if norm == 0.0 {
                break;
            }
            let align: f64 = next.iter().zip(&prev).map(|(a, b)| a * b).sum();
            prev = next.clone();
            v = next;
            if (1.0 - align.abs()) < 1e-10 {
                // Successive iterates agree; accept only once the
                // eigen-residual is small too, otherwise a slow (small
                // eigen-gap) direction would stop while still rotated
                // and leave projected coordinates correlated.
                let mut cv = vec![0.0; d];
                kernels::matmul_nn(&scatter, &v, d, d, 1, &mut cv);
                let lambda: f64 = v.iter().zip(&cv).map(|(a, b)| a * b).sum();
                let residual: f64 = cv
                    .iter()
                    .zip(&v)
                    .map(|(c, x)| (c - lambda * x) * (c - lambda * x))
                    .sum::<f64>()
                    .sqrt();
                let scale = top_eigenvalue.max(lambda.abs()).max(1e-12);
                if residual / scale < 1e-8 {
                    break;
                }
            }
        }
        // Rayleigh quotient on the deflated matrix.
        let mut cv = vec![0.0; d];
        kernels::matmul_nn(&scatter, &v, d, d, 1, &mut cv);
        let lambda: f64 = v.iter().zip(&cv).map(|(a, b)| a * b).sum();
        if comp == 0 {
            top_eigenvalue = lambda.abs();
        }
        eigenvalues.push(lambda);
        components.data_mut()[comp * d..(comp + 1) * d].copy_from_slice(&v);
        // Deflate: remove this component's subspace.
        for i in 0..d {
            let vi = v[i];
            if vi == 0.0 {
                continue;
            }
            let row = &mut scatter[i * d..(i + 1) * d];
            for (r, vj) in row.iter_mut().zip(&v) {
                *r -= lambda * vi * vj;
            }
        }
    }
    Ok(PcaBasis {
        mean: Tensor::new(&[d], mean).expect("mean shape"),
        components,
        eigenvalues,
    })
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
    norm
}

impl PcaBasis {
    pub fn n(&self) -> usize {
        self.components.shape()[0]
    }

    pub fn input_dim(&self) -> usize {
        self.components.shape()[1]
    }

    /// Centered projection to n dimensions.
    pub fn project(&self, images: &Tensor) -> Result<Tensor> {
        let (rows, d) = flatten_view(images);
        if d != self.input_dim() {
            return Err(BaselineError::Dimension {
                expected: self.input_dim(),
                got: d,
            });
        }
        let n = self.n();
        let mut centered = images.data().to_vec();
        for row in centered.chunks_mut(d) {
            for (v, m) in row.iter_mut().zip(self.mean.data()) {
                *v -= m;
            }
        }
        let mut out = vec![0.0; rows * n];
        kernels::matmul_nt_acc(&centered, self.components.data(), rows, d, n, &mut out);
        Ok(Tensor::new(&[rows, n], out).expect("projection shape"))
    }

    /// Back-projection to input space (adds the mean back).
    pub fn reconstruct(&self, z: &Tensor) -> Result<Tensor> {
        let (rows, zn) = flatten_view(z);
        if zn != self.n() {
            return Err(BaselineError::Dimension { expected: self.n(), got: zn });
        }
        let d = self.input_dim();
        let mut out = vec![0.0; rows * d];
        kernels::matmul_nn(z.data(), self.components.data(), rows, zn, d, &mut out);
        for row in out.chunks_mut(d) {
            for (v, m) in row.iter_mut().zip(self.mean.data()) {
                *v += m;
            }
        }
        Ok(Tensor::new(&[rows, d], out).expect("reconstruction shape"))
    }

    /// Mean squared reconstruction error over a dataset.
    pub fn reconstruction_error(&self, images: &Tensor) -> Result<f64> {
        let z = self.project(images)?;
        let back = self.reconstruct(&z)?;
        let (rows, d) = flatten_view(images);
        let mut err = 0.0;
        for (a, b) in images.data().iter().zip(back.data()) {
            err += (a - b) * (a - b);
        }
        Ok(err / (rows * d) as f64)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = ContainerHeader {
            kind: ContainerKind::PcaBasis,
            family: Family::Fc,
            size: SizeClass::Small,
            masking: MaskingMode::None,
            n: self.n() as u32,
            lambda: 0.0,
            mask_ratio: 0.0,
            dropout: 0.0,
            droppath: 0.0,
            seed: 0,
            input_shape: (0, 0, 0),
        };
        let eig = Tensor::new(&[self.eigenvalues.len()], self.eigenvalues.clone()).expect("eig shape");
        crate::zoo::checkpoint_write(
            path,
            &header,
            &[
                ("mean".to_string(), &self.mean),
                ("components".to_string(), &self.components),
                ("eigenvalues".to_string(), &eig),
            ],
        )?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, tensors) = crate::zoo::checkpoint_read(path)?;
        assert_eq!(header.kind, ContainerKind::PcaBasis, "container kind");
        let mut mean = None;
        let mut components = None;
        let mut eigenvalues = None;
        for (name, t) in tensors {
            match name.as_str() {
                "mean" => mean = Some(t),
                "components" => components = Some(t),
                "eigenvalues" => eigenvalues = Some(t.into_data()),
                _ => {}
            }
        }
        Ok(Self {
            mean: mean.expect("mean tensor"),
            components: components.expect("components tensor"),
            eigenvalues: eigenvalues.expect("eigenvalues tensor"),
        })
    }
}

impl RandomProjection {
    /// Draws the matrix once from a seeded standard normal, scaled by
    /// 1/sqrt(d).
    pub fn new(n: usize, d: usize, seed: u64) -> Self {
        let mut matrix = Tensor::zeros(&[n, d]);
        let mut rng = rng_from_seed(derive_seed(seed, &[0x52b]));
        fill_normal(&mut rng, 1.0 / (d as f64).sqrt(), matrix.data_mut());
        Self { matrix, seed }
    }

    pub fn n(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn input_dim(&self) -> usize {
        self.matrix.shape()[1]
    }

    /// Uncentered linear projection.
    pub fn project(&self, images: &Tensor) -> Result<Tensor> {
        let (rows, d) = flatten_view(images);
        if d != self.input_dim() {
            return Err(BaselineError::Dimension {
                expected: self.input_dim(),
                got: d,
            });
        }
        let n = self.n();
        let mut out = vec![0.0; rows * n];
        kernels::matmul_nt_acc(images.data(), self.matrix.data(), rows, d, n, &mut out);
        Ok(Tensor::new(&[rows, n], out).expect("projection shape"))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = ContainerHeader {
            kind: ContainerKind::RandomProjection,
            family: Family::Fc,
            size: SizeClass::Small,
            masking: MaskingMode::None,
            n: self.n() as u32,
            lambda: 0.0,
            mask_ratio: 0.0,
            dropout: 0.0,
            droppath: 0.0,
            seed: self.seed,
            input_shape: (0, 0, 0),
        };
        crate::zoo::checkpoint_write(path, &header, &[("matrix".to_string(), &self.matrix)])?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, tensors) = crate::zoo::checkpoint_read(path)?;
        assert_eq!(header.kind, ContainerKind::RandomProjection, "container kind");
        let matrix = tensors.into_iter().find(|(n, _)| n == "matrix").expect("matrix tensor").1;
        Ok(Self {
            matrix,
            seed: header.seed,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Classifier,
    Decoder,
}

/// Outcome of training one head on frozen features.
#[derive(Debug, Clone)]
pub struct HeadRun {
    pub kind: HeadKind,
    /// (epoch, test metric): accuracy for classifiers, MSE for decoders.
    pub per_epoch: Vec<(usize, f64)>,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub head: LayerStack,
}

/// Per-dimension standardization fit on the training features. Frozen
/// projections differ wildly in scale (top principal coordinates carry
/// the data variance, random projections stay near unit scale);
/// standardizing keeps the Tanh decoder head out of saturation without
/// changing what the representation encodes.
fn standardize(train: &Tensor, test: &Tensor) -> (Tensor, Tensor) {
    let (n, d) = flatten_view(train);
    let mut mean = vec![0.0; d];
    for row in train.data().chunks(d) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / n as f64;
        }
    }
    let mut var = vec![0.0; d];
    for row in train.data().chunks(d) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m) / n as f64;
        }
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / v.sqrt().max(1e-8)).collect();
    let apply = |t: &Tensor| {
        let mut out = t.clone();
        for row in out.data_mut().chunks_mut(d) {
            for ((v, m), s) in row.iter_mut().zip(&mean).zip(&inv_std) {
                *v = (*v - m) * s;
            }
        }
        out
    };
    (apply(train), apply(test))
}

/// Trains a classifier (cross entropy) or decoder (MSE) head with Adam
/// on precomputed frozen features. The feature source never updates.
#[allow(clippy::too_many_arguments)]
pub fn train_head(
    train_features: &Tensor,
    train_ds: &Dataset,
    test_features: &Tensor,
    test_ds: &Dataset,
    kind: HeadKind,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    seed: u64,
) -> Result<HeadRun> {
    let (train_features, test_features) = standardize(train_features, test_features);
    let (train_features, test_features) = (&train_features, &test_features);
    let (_, feat_dim) = flatten_view(train_features);
    let (c, h, w) = train_ds.image_shape();
    let mut rng = rng_from_seed(derive_seed(seed, &[0x4ead]));
    let mut head = match kind {
        HeadKind::Classifier => LayerStack::new(vec![Layer::Linear(Linear::init(feat_dim, 10, Init::LinearFan, &mut rng))]),
        HeadKind::Decoder => LayerStack::new(vec![
            Layer::Linear(Linear::init(feat_dim, c * h * w, Init::LinearFan, &mut rng)),
            Layer::Tanh,
            Layer::Unflatten { c, h, w },
        ]),
    };
    let mut adam = AdamState::new(lr);
    let n = train_ds.len();
    let per_feat = feat_dim;
    let mut per_epoch = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let batches = crate::data::batch_indices(n, batch_size, Some(derive_seed(seed, &[1, epoch as u64])));
        for idx in batches {
            let mut feats = Tensor::zeros(&[idx.len(), per_feat]);
            for (row, &i) in idx.iter().enumerate() {
                feats.data_mut()[row * per_feat..(row + 1) * per_feat]
                    .copy_from_slice(&train_features.data()[i * per_feat..(i + 1) * per_feat]);
            }
            let mut g = Graph::new();
            let x = g.leaf(feats)?;
            let mut ctx = FwdCtx::train(derive_seed(seed, &[2, epoch as u64]));
            let mut binds = Binds::new();
            let out = head.forward(&mut g, x, &mut ctx, "head", &mut binds)?;
            let loss = match kind {
                HeadKind::Classifier => {
                    let labels: Vec<usize> = idx.iter().map(|&i| train_ds.labels[i]).collect();
                    cross_entropy_loss(&mut g, out, &labels)?
                }
                HeadKind::Decoder => {
                    let (images, _) = train_ds.gather_batch(&idx);
                    let target = g.leaf(images)?;
                    mse_loss(&mut g, out, target)?
                }
            };
            g.backward(loss)?;
            adam_apply(&mut head, &mut adam, &binds, &g)?;
        }
        let metric = evaluate_head(&mut head, kind, test_features, test_ds)?;
        per_epoch.push((epoch, metric));
    }
    let (best_epoch, best_metric) = match kind {
        HeadKind::Classifier => per_epoch
            .iter()
            .copied()
            .max_by(|a, b| a.1.partial_cmp(&b.1).expect("finite"))
            .unwrap_or((0, 0.0)),
        HeadKind::Decoder => per_epoch
            .iter()
            .copied()
            .min_by(|a, b| a.1.partial_cmp(&b.1).expect("finite"))
            .unwrap_or((0, 0.0)),
    };
    Ok(HeadRun {
        kind,
        per_epoch,
        best_epoch,
        best_metric,
        head,
    })
}

fn evaluate_head(head: &mut LayerStack, kind: HeadKind, features: &Tensor, ds: &Dataset) -> Result<f64> {
    let (rows, feat_dim) = flatten_view(features);
    let mut g = Graph::new();
    let x = g.leaf(Tensor::new(&[rows, feat_dim], features.data().to_vec()).expect("features"))?;
    let mut ctx = FwdCtx::eval();
    let mut binds = Binds::new();
    let out = head.forward(&mut g, x, &mut ctx, "head", &mut binds)?;
    match kind {
        HeadKind::Classifier => {
            let logits = g.value(out);
            let mut correct = 0usize;
            for (b, row) in logits.data().chunks(10).enumerate() {
                let pred = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite"))
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                if pred == ds.labels[b] {
                    correct += 1;
                }
            }
            Ok(correct as f64 / rows as f64)
        }
        HeadKind::Decoder => {
            let recon = g.value(out);
            let mut err = 0.0;
            for (a, b) in recon.data().iter().zip(ds.images.data()) {
                err += (a - b) * (a - b);
            }
            Ok(err / recon.len() as f64)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth, Split};

    fn flat_images(ds: &Dataset) -> Tensor {
        let (n, d) = (ds.len(), ds.pixels_per_image());
        Tensor::new(&[n, d], ds.images.data().to_vec()).unwrap()
    }

    #[test]
    fn rank_one_data_gives_perfect_first_component() {
        // Points on a line through the origin along (3, 4)/5.
        let dir = [0.6, 0.8];
        let mut data = Tensor::zeros(&[20, 2]);
        for i in 0..20 {
            let t = (i as f64 - 9.5) / 3.0;
            data.data_mut()[i * 2] = t * dir[0];
            data.data_mut()[i * 2 + 1] = t * dir[1];
        }
        let basis = fit_pca(&data, 1).unwrap();
        let c = &basis.components.data()[..2];
        let align = (c[0] * dir[0] + c[1] * dir[1]).abs();
        assert!((align - 1.0).abs() < 1e-8, "component parallel to the line");
        assert!(basis.reconstruction_error(&data).unwrap() < 1e-16);
    }

    #[test]
    fn isotropic_data_reconstructs_with_full_basis() {
        let mut rng = rng_from_seed(3);
        let mut data = Tensor::zeros(&[200, 3]);
        fill_normal(&mut rng, 1.0, data.data_mut());
        let basis = fit_pca(&data, 3).unwrap();
        // Basis direction is arbitrary under symmetry; assert error only.
        assert!(basis.reconstruction_error(&data).unwrap() < 1e-10);
    }

    #[test]
    fn components_are_orthonormal_and_eigenvalues_descend() {
        let ds = synth::synthetic_digits(Split::Train, 300);
        let basis = fit_pca(&flat_images(&ds), 8).unwrap();
        let d = basis.input_dim();
        for i in 0..8 {
            for j in i..8 {
                let a = &basis.components.data()[i * d..(i + 1) * d];
                let b = &basis.components.data()[j * d..(j + 1) * d];
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-8, "components {i},{j}: dot {dot}");
            }
        }
        for pair in basis.eigenvalues.windows(2) {
            assert!(pair[0] >= pair[1] - 1e-10, "eigenvalues must not increase");
        }
        assert!(basis.eigenvalues.iter().all(|&e| e >= -1e-10));
    }

    #[test]
    fn full_rank_projection_round_trips() {
        let mut rng = rng_from_seed(5);
        let mut data = Tensor::zeros(&[50, 6]);
        fill_normal(&mut rng, 2.0, data.data_mut());
        let basis = fit_pca(&data, 6).unwrap();
        let z = basis.project(&data).unwrap();
        let back = basis.reconstruct(&z).unwrap();
        for (a, b) in data.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn projection_of_mean_is_zero_and_rp_is_linear() {
        let ds = synth::synthetic_digits(Split::Train, 100);
        let flat = flat_images(&ds);
        let basis = fit_pca(&flat, 4).unwrap();
        let mean_img = Tensor::new(&[1, basis.input_dim()], basis.mean.data().to_vec()).unwrap();
        let z = basis.project(&mean_img).unwrap();
        assert!(z.data().iter().all(|v| v.abs() < 1e-8));

        let rp = RandomProjection::new(4, basis.input_dim(), 9);
        let zero = Tensor::zeros(&[1, basis.input_dim()]);
        let pz = rp.project(&zero).unwrap();
        assert!(pz.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn pca_reconstruction_error_non_increasing_in_n() {
        let ds = synth::synthetic_digits(Split::Train, 200);
        let flat = flat_images(&ds);
        let mut prev = f64::INFINITY;
        for n in [1, 2, 4, 8, 16] {
            let err = fit_pca(&flat, n).unwrap().reconstruction_error(&flat).unwrap();
            assert!(err <= prev + 1e-12, "n={n}: {err} > {prev}");
            prev = err;
        }
    }

    #[test]
    fn projected_coordinates_are_uncorrelated() {
        let ds = synth::synthetic_digits(Split::Train, 400);
        let flat = flat_images(&ds);
        let basis = fit_pca(&flat, 5).unwrap();
        let z = basis.project(&flat).unwrap();
        let n = z.shape()[0] as f64;
        let k = 5;
        let mut mean = vec![0.0; k];
        for row in z.data().chunks(k) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n;
            }
        }
        let mut cov = vec![0.0; k * k];
        for row in z.data().chunks(k) {
            for i in 0..k {
                for j in 0..k {
                    cov[i * k + j] += (row[i] - mean[i]) * (row[j] - mean[j]) / (n - 1.0);
                }
            }
        }
        let diag_scale: f64 = (0..k).map(|i| cov[i * k + i]).fold(0.0, f64::max);
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    assert!(
                        cov[i * k + j].abs() / diag_scale < 1e-6,
                        "off-diagonal {i},{j}: {}",
                        cov[i * k + j]
                    );
                }
            }
        }
    }

    #[test]
    fn random_projection_is_deterministic_per_seed() {
        let a = RandomProjection::new(8, 784, 7);
        let b = RandomProjection::new(8, 784, 7);
        let c = RandomProjection::new(8, 784, 8);
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.matrix), bits(&b.matrix));
        assert_ne!(bits(&a.matrix), bits(&c.matrix));
    }

    #[test]
    fn classifier_head_beats_chance_and_source_stays_frozen() {
        let train = synth::synthetic_digits(Split::Train, 600);
        let test = synth::synthetic_digits(Split::Test, 200);
        let basis = fit_pca(&flat_images(&train), 24).unwrap();
        let before: Vec<u64> = basis.components.data().iter().map(|v| v.to_bits()).collect();
        let ftr = basis.project(&flat_images(&train)).unwrap();
        let fte = basis.project(&flat_images(&test)).unwrap();
        let run = train_head(&ftr, &train, &fte, &test, HeadKind::Classifier, 8, 64, 0.003, 1).unwrap();
        assert!(run.best_metric > 0.1, "accuracy {} must beat chance", run.best_metric);
        let after: Vec<u64> = basis.components.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(before, after, "projection must never update");
    }

    #[test]
    fn pca_decoder_beats_rp_decoder_at_low_n() {
        let train = synth::synthetic_digits(Split::Train, 600);
        let test = synth::synthetic_digits(Split::Test, 200);
        let flat_tr = flat_images(&train);
        let flat_te = flat_images(&test);
        let basis = fit_pca(&flat_tr, 8).unwrap();
        let rp = RandomProjection::new(8, flat_tr.shape()[1], 13);
        let pca_run = train_head(
            &basis.project(&flat_tr).unwrap(),
            &train,
            &basis.project(&flat_te).unwrap(),
            &test,
            HeadKind::Decoder,
            8,
            64,
            0.003,
            2,
        )
        .unwrap();
        let rp_run = train_head(
            &rp.project(&flat_tr).unwrap(),
            &train,
            &rp.project(&flat_te).unwrap(),
            &test,
            HeadKind::Decoder,
            8,
            64,
            0.003,
            2,
        )
        .unwrap();
        assert!(
            pca_run.best_metric < rp_run.best_metric,
            "pca mse {} should beat rp mse {}",
            pca_run.best_metric,
            rp_run.best_metric
        );
    }

    #[test]
    fn basis_checkpoints_round_trip() {
        let dir = std::env::temp_dir().join("cre-baseline-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let ds = synth::synthetic_digits(Split::Train, 100);
        let basis = fit_pca(&flat_images(&ds), 3).unwrap();
        let p = dir.join("basis.ckpt");
        basis.save(&p).unwrap();
        let loaded = PcaBasis::load(&p).unwrap();
        assert_eq!(basis.components.data(), loaded.components.data());
        assert_eq!(basis.eigenvalues, loaded.eigenvalues);

        let rp = RandomProjection::new(4, 784, 77);
        let rp_path = dir.join("rp.ckpt");
        rp.save(&rp_path).unwrap();
        let rp2 = RandomProjection::load(&rp_path).unwrap();
        assert_eq!(rp.matrix.data(), rp2.matrix.data());
        assert_eq!(rp2.seed, 77);
    }
}
