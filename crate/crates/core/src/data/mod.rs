//! Dataset ingestion, normalization, patching, augmentation, and
//! batching.
//!
//! Pixels are normalized to [-1, 1] to match the Tanh decoders. Loaders
//! are total: a malformed file yields an error naming the byte offset,
//! never a partial dataset. The built-in [`synth`] corpus provides a
//! deterministic 28x28 digit dataset for machines without the real
//! archives.

mod augment;
mod cifar;
mod idx;
pub mod patches;
pub mod synth;

pub use augment::{augment_rotate, rotate_image};
pub use cifar::{load_cifar10, write_cifar_batch};
pub use idx::{load_idx, write_idx_images, write_idx_labels};
pub use patches::{patchify, unpatchify};

use crate::rng::rng_from_seed;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: io error: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic {found:#x} at byte 0 (expected {expected:#x})")]
    BadMagic { path: String, found: u32, expected: u32 },
    #[error("{path}: truncated at byte {offset}")]
    Truncated { path: String, offset: usize },
    #[error("{path}: {trailing} trailing bytes after offset {offset}")]
    TrailingBytes { path: String, offset: usize, trailing: usize },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path}: file length {len} not divisible by record size {record}")]
    BadRecordSize { path: String, len: usize, record: usize },
    #[error("{path}: label {label} out of range at record {record}")]
    LabelOutOfRange { path: String, label: u8, record: usize },
    #[error("spatial extent {extent} not divisible by patch size {patch}")]
    IndivisiblePatch { extent: usize, patch: usize },
    #[error("unknown dataset name {0:?}")]
    UnknownDataset(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// An immutable, normalized image-classification dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    /// (N, C, H, W), values in [-1, 1].
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub split: Split,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// (channels, height, width)
    pub fn image_shape(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    pub fn pixels_per_image(&self) -> usize {
        let (c, h, w) = self.image_shape();
        c * h * w
    }

    /// Copies the rows at `indices` into a batch tensor plus labels.
    pub fn gather_batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let per = self.pixels_per_image();
        let (c, h, w) = self.image_shape();
        let mut out = Tensor::zeros(&[indices.len(), c, h, w]);
        for (row, &i) in indices.iter().enumerate() {
            out.data_mut()[row * per..(row + 1) * per].copy_from_slice(&self.images.data()[i * per..(i + 1) * per]);
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (out, labels)
    }

    /// Keeps the first `n` samples of a seeded shuffle (all samples if
    /// `n == 0` or `n >= len`).
    pub fn limit(&self, n: usize, seed: u64) -> Dataset {
        if n == 0 || n >= self.len() {
            return self.clone();
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut rng_from_seed(seed));
        order.truncate(n);
        let (images, labels) = self.gather_batch(&order);
        Dataset {
            name: self.name.clone(),
            images,
            labels,
            split: self.split,
        }
    }

    fn validate(self) -> Result<Self> {
        debug_assert!(self.images.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        debug_assert!(self.labels.iter().all(|l| *l < 10));
        Ok(self)
    }
}

/// Batches of shuffled sample indices; the final partial batch is kept.
pub fn batch_indices(n: usize, batch_size: usize, shuffle_seed: Option<u64>) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch size must be >= 1");
    let mut order: Vec<usize> = (0..n).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut rng_from_seed(seed));
    }
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

pub(crate) fn byte_to_unit(v: u8) -> f64 {
    -1.0 + 2.0 * (v as f64) / 255.0
}

/// Maps a [-1, 1] value back to a byte, clamping.
pub fn unit_to_byte(v: f64) -> u8 {
    (((v.clamp(-1.0, 1.0) + 1.0) / 2.0) * 255.0).round() as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_mapping_hits_exact_endpoints() {
        assert_eq!(byte_to_unit(0), -1.0);
        assert_eq!(byte_to_unit(255), 1.0);
        assert_eq!(unit_to_byte(-1.0), 0);
        assert_eq!(unit_to_byte(1.0), 255);
    }

    #[test]
    fn batch_sizes_cover_the_dataset() {
        let batches = batch_indices(10, 3, None);
        let sizes: Vec<usize> = batches.iter().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![3, 3, 3, 1]);
        let flat: Vec<usize> = batches.into_iter().flatten().collect();
        assert_eq!(flat, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn shuffle_is_seeded_and_reproducible() {
        let a = batch_indices(100, 7, Some(5));
        let b = batch_indices(100, 7, Some(5));
        let c = batch_indices(100, 7, Some(6));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn limit_takes_a_seeded_subset() {
        let ds = synth::synthetic_digits(Split::Test, 60);
        let small = ds.limit(20, 3);
        assert_eq!(small.len(), 20);
        let again = ds.limit(20, 3);
        assert_eq!(small.images.data(), again.images.data());
        assert_eq!(ds.limit(0, 3).len(), 60);
    }
}
