//! Sweep summaries and the analysis artifacts built from them: box
//! plots over lambda, dimension-scaling charts with confidence bands,
//! latent-space CSV exports, and reconstruction image grids.

mod grid;
mod latent;
mod svg;

pub use grid::{reconstruction_grid, GridImage};
pub use latent::export_latent;
pub use svg::{plot_scaling, plot_tradeoff, ScalingPoint, ScalingSeries};

use crate::harness::{CsvRow, RunRecord};
use std::collections::BTreeMap;

/// Grouping key for summaries: one experimental condition.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct GroupKey {
    pub family: String,
    pub size: String,
    pub n: usize,
    pub dataset: String,
    pub masking_mode: String,
    /// Lambda encoded as its exact bit pattern so the key stays Ord.
    lambda_bits: u64,
}

impl GroupKey {
    pub fn lambda(&self) -> f64 {
        f64::from_bits(self.lambda_bits)
    }
}

/// Quartiles, mean, and normal-approximation 95% confidence half-width
/// of one metric's best-epoch sample.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSummary {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub mean: f64,
    pub half_width: f64,
    pub min: f64,
    pub max: f64,
}

/// Linear-interpolation quantile on a sorted sample.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

impl MetricSummary {
    pub fn from_sample(values: &[f64]) -> Self {
        assert!(!values.is_empty(), "summary needs at least one value");
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite metrics"));
        let n = sorted.len() as f64;
        let mean = sorted.iter().sum::<f64>() / n;
        // stderr of a single observation is defined as zero.
        let half_width = if sorted.len() < 2 {
            0.0
        } else {
            let var = sorted.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
            1.96 * (var / n).sqrt()
        };
        Self {
            q1: quantile(&sorted, 0.25),
            median: quantile(&sorted, 0.5),
            q3: quantile(&sorted, 0.75),
            mean,
            half_width,
            min: sorted[0],
            max: *sorted.last().expect("non-empty"),
        }
    }
}

/// Per-condition distribution of best-epoch metrics across runs.
#[derive(Debug, Clone)]
pub struct SweepSummary {
    pub key: GroupKey,
    pub sample_count: usize,
    pub accuracy: MetricSummary,
    pub mse: MetricSummary,
}

/// Best-epoch metric pair of one run.
#[derive(Debug, Clone, Copy)]
struct BestPair {
    accuracy: f64,
    mse: f64,
}

/// Groups run records by condition and summarizes their best-epoch
/// metrics. Empty or failed runs are dropped.
pub fn summarize_records(records: &[RunRecord]) -> Vec<SweepSummary> {
    let pairs = records.iter().filter(|r| r.succeeded()).filter_map(|r| {
        let accuracy = r.best_accuracy()?;
        let mse = r.best_mse()?;
        let key = GroupKey {
            family: r.config.family.as_str().to_string(),
            size: r.config.size.as_str().to_string(),
            n: r.config.n,
            dataset: r.config.dataset.as_str().to_string(),
            masking_mode: r.config.masking_mode.as_str().to_string(),
            lambda_bits: r.config.lambda.to_bits(),
        };
        Some((key, BestPair { accuracy, mse }))
    });
    summarize_pairs(pairs)
}

/// Same summaries, starting from parsed metrics-CSV rows: each run's
/// best epoch is re-derived from its test rows.
pub fn summarize_rows(rows: &[CsvRow]) -> Vec<SweepSummary> {
    let mut per_run: BTreeMap<String, (GroupKey, f64, f64)> = BTreeMap::new();
    for row in rows.iter().filter(|r| r.split == "test") {
        let key = GroupKey {
            family: row.family.clone(),
            size: row.size.clone(),
            n: row.n,
            dataset: row.dataset.clone(),
            masking_mode: row.masking_mode.clone(),
            lambda_bits: row.lambda.to_bits(),
        };
        let entry = per_run
            .entry(row.run_id.clone())
            .or_insert((key, f64::NEG_INFINITY, f64::INFINITY));
        entry.1 = entry.1.max(row.accuracy);
        entry.2 = entry.2.min(row.mse);
    }
    summarize_pairs(per_run.into_values().map(|(key, accuracy, mse)| {
        (key, BestPair { accuracy, mse })
    }))
}

fn summarize_pairs(pairs: impl Iterator<Item = (GroupKey, BestPair)>) -> Vec<SweepSummary> {
    let mut groups: BTreeMap<GroupKey, Vec<BestPair>> = BTreeMap::new();
    for (key, pair) in pairs {
        groups.entry(key).or_default().push(pair);
    }
    groups
        .into_iter()
        .map(|(key, sample)| {
            let accs: Vec<f64> = sample.iter().map(|p| p.accuracy).collect();
            let mses: Vec<f64> = sample.iter().map(|p| p.mse).collect();
            SweepSummary {
                key,
                sample_count: sample.len(),
                accuracy: MetricSummary::from_sample(&accs),
                mse: MetricSummary::from_sample(&mses),
            }
        })
        .collect()
}
