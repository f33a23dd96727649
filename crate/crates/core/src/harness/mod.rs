//! Training runs, lambda sweeps, and metric records.
//!
//! A run is a pure function of its `RunConfig`: model init, batch
//! shuffles, masks, and stochastic layers all derive from the config
//! seed, so replaying a config reproduces the metrics table bit for bit.

mod csvio;

pub use csvio::{metrics_csv_string, parse_metrics_csv, write_metrics_csv, CsvRow, CSV_HEADER};

use crate::data::{self, synth, Dataset, Split};
use crate::nn::{adam_apply, FwdCtx};
use crate::rng::derive_seed;
use crate::tensor::{Graph, Tensor};
use crate::zoo::{build_cre, save_model, CreModel, Family, MaskingMode, SizeClass};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Data(#[from] data::DataError),
    #[error(transparent)]
    Zoo(#[from] crate::zoo::ZooError),
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error("config: {0}")]
    Config(String),
    #[error("metric for epoch {epoch} arrived out of order (last recorded {last})")]
    OutOfOrderEpoch { epoch: usize, last: usize },
    #[error("io {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, HarnessError>;

fn io_err(path: &Path, source: std::io::Error) -> HarnessError {
    HarnessError::Io {
        path: path.to_string_lossy().into_owned(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetName {
    Mnist,
    FashionMnist,
    Cifar10,
    Synth,
}

impl DatasetName {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetName::Mnist => "mnist",
            DatasetName::FashionMnist => "fashion_mnist",
            DatasetName::Cifar10 => "cifar10",
            DatasetName::Synth => "synth",
        }
    }

    pub fn image_shape(self) -> (usize, usize, usize) {
        match self {
            DatasetName::Cifar10 => (3, 32, 32),
            _ => (1, 28, 28),
        }
    }
}

fn default_mask_ratio() -> f64 {
    0.66
}
fn default_epochs() -> usize {
    50
}
fn default_batch() -> usize {
    128
}
fn default_lr() -> f64 {
    0.001
}
fn default_rotate() -> f64 {
    15.0
}

/// One training run's configuration. The TOML schema is exactly the
/// serialized field set (unknown keys are rejected).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub family: Family,
    pub size: SizeClass,
    #[serde(default)]
    pub n: usize,
    pub dataset: DatasetName,
    #[serde(default)]
    pub data_root: Option<PathBuf>,
    pub lambda: f64,
    #[serde(default = "MaskingMode::none")]
    pub masking_mode: MaskingMode,
    #[serde(default = "default_mask_ratio")]
    pub mask_ratio: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr_encoder: f64,
    #[serde(default = "default_lr")]
    pub lr_decoder: f64,
    #[serde(default = "default_lr")]
    pub lr_classifier: f64,
    #[serde(default)]
    pub seed: u64,
    /// 0 trains on the full split; otherwise the first N shuffled samples.
    #[serde(default)]
    pub limit: usize,
    /// None picks the family default (0.3 for the large CNN, else 0).
    #[serde(default)]
    pub dropout: Option<f64>,
    /// None picks the family default (0.2 for the large ViT, else 0).
    #[serde(default)]
    pub droppath: Option<f64>,
    /// Sweep concurrency; 0 uses every core.
    #[serde(default)]
    pub workers: usize,
    /// CIFAR-10 rotation magnitude in degrees (not part of the file
    /// schema; set programmatically or via CLI).
    #[serde(skip, default = "default_rotate")]
    pub rotate_degrees: f64,
}

impl MaskingMode {
    fn none() -> Self {
        MaskingMode::None
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn effective_dropout(&self) -> f64 {
        self.dropout.unwrap_or(match (self.family, self.size) {
            (Family::Cnn, SizeClass::Large) => 0.3,
            _ => 0.0,
        })
    }

    pub fn effective_droppath(&self) -> f64 {
        self.droppath.unwrap_or(match (self.family, self.size) {
            (Family::Vit, SizeClass::Large) => 0.2,
            _ => 0.0,
        })
    }

    pub fn run_id(&self) -> String {
        format!(
            "{}-{}-n{}-{}-lam{}-{}-s{}",
            self.family.as_str(),
            self.size.as_str(),
            self.n,
            self.dataset.as_str(),
            self.lambda,
            self.masking_mode.as_str(),
            self.seed
        )
    }

    pub fn build_model(&self) -> Result<CreModel> {
        let mut model = build_cre(
            self.family,
            self.size,
            self.n,
            self.dataset.image_shape(),
            self.masking_mode,
            self.mask_ratio,
            self.effective_dropout(),
            self.effective_droppath(),
            derive_seed(self.seed, &[0x1417]),
        )?;
        model.lambda = self.lambda;
        Ok(model)
    }
}

/// Resolves the dataset root: explicit config, then CRE_DATA_ROOT, then
/// ./data.
pub fn resolve_data_root(config: &RunConfig) -> PathBuf {
    config
        .data_root
        .clone()
        .or_else(|| std::env::var_os("CRE_DATA_ROOT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data"))
}

/// Loads one split of the configured dataset.
pub fn load_split(config: &RunConfig, split: Split) -> Result<Dataset> {
    match config.dataset {
        DatasetName::Synth => {
            let count = match split {
                Split::Train => synth::DEFAULT_TRAIN,
                Split::Test => synth::DEFAULT_TEST,
            };
            Ok(synth::synthetic_digits(split, count))
        }
        DatasetName::Mnist | DatasetName::FashionMnist => {
            let root = resolve_data_root(config).join(config.dataset.as_str());
            let prefix = match split {
                Split::Train => "train",
                Split::Test => "t10k",
            };
            let images = root.join(format!("{prefix}-images-idx3-ubyte"));
            let labels = root.join(format!("{prefix}-labels-idx1-ubyte"));
            Ok(data::load_idx(&images, &labels, config.dataset.as_str(), split)?)
        }
        DatasetName::Cifar10 => {
            let root = resolve_data_root(config).join("cifar10");
            let files: Vec<PathBuf> = match split {
                Split::Train => (1..=5).map(|i| root.join(format!("data_batch_{i}.bin"))).collect(),
                Split::Test => vec![root.join("test_batch.bin")],
            };
            let refs: Vec<&Path> = files.iter().map(|p| p.as_path()).collect();
            Ok(data::load_cifar10(&refs, split)?)
        }
    }
}

/// Test-split metrics of one epoch (plus the train-side running means).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub accuracy: f64,
    pub mse: f64,
    pub loss_total: f64,
    pub loss_mse: f64,
    pub loss_ce: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based epoch number.
    pub epoch: usize,
    pub train: MetricRow,
    pub test: MetricRow,
}

/// One run's full history plus its best-epoch selections.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub config: RunConfig,
    pub epochs: Vec<EpochMetrics>,
    /// 1-based epoch with the highest test accuracy.
    pub best_accuracy_epoch: Option<usize>,
    /// 1-based epoch with the lowest test MSE.
    pub best_mse_epoch: Option<usize>,
    pub failure: Option<String>,
    pub checkpoint_accuracy: Option<PathBuf>,
    pub checkpoint_mse: Option<PathBuf>,
}

impl RunRecord {
    pub fn new(config: RunConfig) -> Self {
        Self {
            run_id: config.run_id(),
            config,
            epochs: Vec::new(),
            best_accuracy_epoch: None,
            best_mse_epoch: None,
            failure: None,
            checkpoint_accuracy: None,
            checkpoint_mse: None,
        }
    }

    /// Appends one epoch's metrics; epochs must arrive in increasing
    /// order. Best-epoch indices refresh incrementally and stay
    /// re-derivable from the stored table.
    pub fn record_metrics(&mut self, metrics: EpochMetrics) -> Result<()> {
        let last = self.epochs.last().map(|m| m.epoch).unwrap_or(0);
        if metrics.epoch <= last {
            return Err(HarnessError::OutOfOrderEpoch {
                epoch: metrics.epoch,
                last,
            });
        }
        let better_acc = self
            .best_accuracy()
            .map(|best| metrics.test.accuracy > best)
            .unwrap_or(true);
        if better_acc {
            self.best_accuracy_epoch = Some(metrics.epoch);
        }
        let better_mse = self.best_mse().map(|best| metrics.test.mse < best).unwrap_or(true);
        if better_mse {
            self.best_mse_epoch = Some(metrics.epoch);
        }
        self.epochs.push(metrics);
        Ok(())
    }

    fn metric_at(&self, epoch: Option<usize>) -> Option<&EpochMetrics> {
        epoch.and_then(|e| self.epochs.iter().find(|m| m.epoch == e))
    }

    /// Best test accuracy over all epochs so far.
    pub fn best_accuracy(&self) -> Option<f64> {
        self.metric_at(self.best_accuracy_epoch).map(|m| m.test.accuracy)
    }

    /// Best (lowest) test MSE over all epochs so far.
    pub fn best_mse(&self) -> Option<f64> {
        self.metric_at(self.best_mse_epoch).map(|m| m.test.mse)
    }

    pub fn succeeded(&self) -> bool {
        self.failure.is_none() && !self.epochs.is_empty()
    }
}

/// Evaluation pass over a dataset: accuracy, full-image reconstruction
/// MSE, and the three loss scalars at the model's lambda. Evaluation
/// never masks: the encoder sees the full token grid (the protocol of
/// the masked-autoencoder lineage), which is also what makes v1's
/// full-image reconstruction genuinely poor while its accuracy measures
/// how transferable the masked-trained representation is.
pub fn evaluate(model: &mut CreModel, dataset: &Dataset, batch_size: usize) -> Result<MetricRow> {
    let n = dataset.len();
    let mut correct = 0usize;
    let mut sums = MetricRow {
        accuracy: 0.0,
        mse: 0.0,
        loss_total: 0.0,
        loss_mse: 0.0,
        loss_ce: 0.0,
    };
    for idx in data::batch_indices(n, batch_size, None) {
        let (images, labels) = dataset.gather_batch(&idx);
        let weight = idx.len() as f64;
        let mut g = Graph::new();
        let x = g.leaf(images)?;
        let mut ctx = FwdCtx::eval();
        let nodes = model.forward_nodes(&mut g, x, None, &mut ctx)?;
        let losses = model.loss_nodes(&mut g, nodes.reconstruction, x, nodes.logits, &labels, None)?;
        correct += count_correct(g.value(nodes.logits), &labels);
        sums.mse += g.scalar_value(losses.mse) * weight;
        sums.loss_total += g.scalar_value(losses.total) * weight;
        sums.loss_mse += g.scalar_value(losses.mse) * weight;
        sums.loss_ce += g.scalar_value(losses.ce) * weight;
    }
    Ok(MetricRow {
        accuracy: correct as f64 / n as f64,
        mse: sums.mse / n as f64,
        loss_total: sums.loss_total / n as f64,
        loss_mse: sums.loss_mse / n as f64,
        loss_ce: sums.loss_ce / n as f64,
    })
}

/// Per-pixel mean over a dataset, shaped (C, H, W).
fn mean_image(dataset: &Dataset) -> Tensor {
    let per = dataset.pixels_per_image();
    let (c, h, w) = dataset.image_shape();
    let mut mean = Tensor::zeros(&[c, h, w]);
    let n = dataset.len() as f64;
    for image in dataset.images.data().chunks(per) {
        for (m, v) in mean.data_mut().iter_mut().zip(image) {
            *m += v / n;
        }
    }
    mean
}

fn count_correct(logits: &Tensor, labels: &[usize]) -> usize {
    let classes = logits.shape()[1];
    logits
        .data()
        .chunks(classes)
        .zip(labels)
        .filter(|(row, &label)| {
            let pred = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
                .map(|(i, _)| i)
                .unwrap_or(0);
            pred == label
        })
        .count()
}

/// Runs the full training protocol for one config. Numeric failures
/// (non-finite losses or gradients) mark the record as failed rather
/// than erroring, so sweeps can continue.
pub fn run_training(config: &RunConfig, out_dir: Option<&Path>) -> Result<RunRecord> {
    let train_full = load_split(config, Split::Train)?;
    let train = train_full.limit(config.limit, derive_seed(config.seed, &[0x715]));
    let test = load_split(config, Split::Test)?;
    let mut record = RunRecord::new(config.clone());
    let mut model = config.build_model()?;
    model.init_output_bias(&mean_image(&train));
    let (mut opt_enc, mut opt_dec, mut opt_cls) =
        model.fresh_optimizers(config.lr_encoder, config.lr_decoder, config.lr_classifier);

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }

    'epochs: for epoch in 1..=config.epochs {
        let shuffle = derive_seed(config.seed, &[0x5f, epoch as u64]);
        let mut train_sums = (0usize, 0.0f64, 0.0f64, 0.0f64, 0.0f64); // correct, mse, total, ce, samples
        for (bi, idx) in data::batch_indices(train.len(), config.batch_size, Some(shuffle))
            .into_iter()
            .enumerate()
        {
            let (mut images, labels) = train.gather_batch(&idx);
            if config.dataset == DatasetName::Cifar10 {
                images = data::augment_rotate(
                    &images,
                    config.rotate_degrees,
                    derive_seed(config.seed, &[0xa6, epoch as u64, bi as u64]),
                );
            }
            let step_seed = derive_seed(config.seed, &[0x57e9, epoch as u64, bi as u64]);
            let masks = model.training_masks(step_seed, idx.len());
            let mut g = Graph::new();
            let x = g.leaf(images)?;
            let mut ctx = FwdCtx::train(step_seed);
            let nodes = model.forward_nodes(&mut g, x, masks.as_deref(), &mut ctx)?;
            let losses = model.loss_nodes(&mut g, nodes.reconstruction, x, nodes.logits, &labels, masks.as_deref())?;

            let l_total = g.scalar_value(losses.total);
            let l_mse = g.scalar_value(losses.mse);
            let l_ce = g.scalar_value(losses.ce);
            if !(l_total.is_finite() && l_mse.is_finite() && l_ce.is_finite()) {
                record.failure = Some(format!("non-finite loss at epoch {epoch}"));
                break 'epochs;
            }
            train_sums.0 += count_correct(g.value(nodes.logits), &labels);
            let weight = idx.len() as f64;
            train_sums.1 += l_mse * weight;
            train_sums.2 += l_total * weight;
            train_sums.3 += l_ce * weight;
            train_sums.4 += weight;

            // Per-module scheme: decoder from L_MSE, classifier from
            // L_CE, encoder from the composite L; all three gradients
            // taken at the same parameter point.
            let step = |g: &mut Graph,
                        loss: crate::tensor::NodeId,
                        module: &mut dyn crate::nn::Module,
                        opt: &mut crate::nn::AdamState,
                        binds: &crate::nn::Binds|
             -> Result<()> {
                g.backward(loss)?;
                adam_apply(module, opt, binds, g)?;
                Ok(())
            };
            let r1 = step(&mut g, losses.mse, model.decoder_module(), &mut opt_dec, &nodes.decoder_binds);
            let r2 = step(&mut g, losses.ce, model.classifier_module(), &mut opt_cls, &nodes.classifier_binds);
            let r3 = step(&mut g, losses.total, model.encoder_module(), &mut opt_enc, &nodes.encoder_binds);
            for r in [r1, r2, r3] {
                if let Err(HarnessError::Nn(crate::nn::NnError::NonFiniteGradient { param })) = &r {
                    record.failure = Some(format!("non-finite gradient for {param} at epoch {epoch}"));
                    break 'epochs;
                }
                r?;
            }
        }

        let samples = train_sums.4.max(1.0);
        let train_row = MetricRow {
            accuracy: train_sums.0 as f64 / samples,
            mse: train_sums.1 / samples,
            loss_total: train_sums.2 / samples,
            loss_mse: train_sums.1 / samples,
            loss_ce: train_sums.3 / samples,
        };
        let test_row = evaluate(&mut model, &test, config.batch_size)?;
        let prev_best_acc = record.best_accuracy();
        let prev_best_mse = record.best_mse();
        record.record_metrics(EpochMetrics {
            epoch,
            train: train_row,
            test: test_row,
        })?;

        if let Some(dir) = out_dir {
            let run_dir = dir.join(&record.run_id);
            std::fs::create_dir_all(&run_dir).map_err(|e| io_err(&run_dir, e))?;
            if prev_best_acc.map(|b| test_row.accuracy > b).unwrap_or(true) {
                let path = run_dir.join("best_accuracy.ckpt");
                save_model(&mut model, &path)?;
                record.checkpoint_accuracy = Some(path);
            }
            if prev_best_mse.map(|b| test_row.mse < b).unwrap_or(true) {
                let path = run_dir.join("best_mse.ckpt");
                save_model(&mut model, &path)?;
                record.checkpoint_mse = Some(path);
            }
        }
    }

    if let Some(dir) = out_dir {
        persist_record(&record, dir)?;
    }
    Ok(record)
}

/// Writes the run's metrics CSV and a JSON record next to its
/// checkpoints.
pub fn persist_record(record: &RunRecord, out_dir: &Path) -> Result<()> {
    let run_dir = out_dir.join(&record.run_id);
    std::fs::create_dir_all(&run_dir).map_err(|e| io_err(&run_dir, e))?;
    let csv_path = run_dir.join("metrics.csv");
    write_metrics_csv(&csv_path, std::slice::from_ref(record)).map_err(|e| io_err(&csv_path, e))?;
    let json_path = run_dir.join("run.json");
    let json = serde_json::to_string_pretty(record).expect("record serializes");
    std::fs::write(&json_path, json).map_err(|e| io_err(&json_path, e))?;
    Ok(())
}

/// A grid of runs: every lambda crossed with every repetition label.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepTable {
    pub lambdas: Vec<f64>,
    pub reps: Vec<u64>,
    pub runs: Vec<RunRecord>,
}

impl SweepTable {
    /// Successful runs at one lambda.
    pub fn runs_at(&self, lambda: f64) -> impl Iterator<Item = &RunRecord> {
        self.runs
            .iter()
            .filter(move |r| r.config.lambda == lambda && r.succeeded())
    }

    pub fn mean_best_accuracy(&self, lambda: f64) -> Option<f64> {
        mean(self.runs_at(lambda).filter_map(|r| r.best_accuracy()))
    }

    pub fn mean_best_mse(&self, lambda: f64) -> Option<f64> {
        mean(self.runs_at(lambda).filter_map(|r| r.best_mse()))
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let collected: Vec<f64> = values.collect();
    if collected.is_empty() {
        None
    } else {
        Some(collected.iter().sum::<f64>() / collected.len() as f64)
    }
}

/// Runs the lambda grid times the repetition labels. Each run's seed is
/// derived from (base seed, lambda index, repetition label), so growing
/// the grid never shifts existing runs. Individual failures are recorded
/// and the sweep continues.
pub fn lambda_sweep(base: &RunConfig, lambdas: &[f64], reps: &[u64], out_dir: Option<&Path>) -> Result<SweepTable> {
    let mut configs = Vec::with_capacity(lambdas.len() * reps.len());
    for (li, &lambda) in lambdas.iter().enumerate() {
        for &rep in reps {
            let mut c = base.clone();
            c.lambda = lambda;
            c.seed = derive_seed(base.seed, &[li as u64, rep]);
            configs.push(c);
        }
    }
    let runs: Vec<RunRecord> = crate::parallel::map_indexed_with_workers(configs.len(), base.workers, |i| {
        let config = &configs[i];
        run_training(config, out_dir).unwrap_or_else(|e| {
            let mut record = RunRecord::new(config.clone());
            record.failure = Some(e.to_string());
            record
        })
    });
    let table = SweepTable {
        lambdas: lambdas.to_vec(),
        reps: reps.to_vec(),
        runs,
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let csv_path = dir.join("sweep_metrics.csv");
        write_metrics_csv(&csv_path, &table.runs).map_err(|e| io_err(&csv_path, e))?;
    }
    Ok(table)
}
