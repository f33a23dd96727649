//! Workbench for studying how classification- and reconstruction-driven
//! information share a latent representation.
//!
//! The crate provides:
//!
//! - [`tensor`] — a tape-based reverse-mode autodiff engine over dense
//!   `f64` tensors, with a finite-difference checker
//! - [`nn`] — layers, losses, and the Adam optimizer
//! - [`zoo`] — classification-reconstruction encoder (CRE) builders for
//!   fully connected, convolutional, and vision-transformer variants,
//!   including MAE-style patch masking, plus a binary checkpoint format
//! - [`pcn`] — a reference predictive coding network driven by energy
//!   minimization
//! - [`baselines`] — PCA and fixed random-projection representations
//! - [`data`] — IDX / CIFAR-10 loaders, patching, augmentation, batching,
//!   and a built-in synthetic digit corpus for offline runs
//! - [`harness`] — seeded training runs, lambda sweeps, and metrics CSV
//! - [`report`] — sweep summaries, SVG charts, latent exports, and
//!   reconstruction grids
//!
//! The `parallel` feature (default) backs the inner loops with rayon;
//! building with `--no-default-features` selects the sequential fallback.

pub mod baselines;
pub mod data;
pub mod harness;
pub mod nn;
pub mod parallel;
pub mod pcn;
pub mod report;
pub mod rng;
pub mod tensor;
pub mod zoo;
