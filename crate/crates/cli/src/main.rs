//! `cre` — train classification-reconstruction encoders, sweep lambda
//! grids, benchmark PCA/RP heads, trace predictive-coding inference,
//! and render reports.

use clap::{Parser, Subcommand, ValueEnum};
use cre_core::baselines::{fit_pca, train_head, HeadKind, RandomProjection};
use cre_core::data::Split;
use cre_core::harness::{
    lambda_sweep, load_split, parse_metrics_csv, run_training, RunConfig, CSV_HEADER,
};
use cre_core::pcn::{pcn_infer, PcnActivation, PcnModel, PcnState};
use cre_core::report::{
    export_latent, plot_scaling, plot_tradeoff, reconstruction_grid, summarize_rows, ScalingPoint, ScalingSeries,
    SweepSummary,
};
use cre_core::rng::{fill_normal, rng_from_seed};
use cre_core::tensor::Tensor;
use cre_core::zoo::load_model;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "cre", about = "Classification-reconstruction trade-off workbench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model from a TOML config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for checkpoints, metrics.csv, and run.json.
        #[arg(long)]
        out: Option<PathBuf>,
        /// CIFAR-10 rotation magnitude in degrees.
        #[arg(long, default_value_t = 15.0)]
        rotate_degrees: f64,
    },
    /// Train a lambda grid times repetition labels.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated lambda values.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        lambdas: Vec<f64>,
        /// Comma-separated repetition labels (each becomes one run per lambda).
        #[arg(long, value_delimiter = ',', num_args = 1.., default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train classifier and decoder heads on a frozen PCA or RP representation.
    Baseline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        kind: BaselineKind,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run predictive-coding inference and print per-iteration energy as CSV.
    PcnDemo {
        /// Layer sizes, bottom to top.
        #[arg(long, value_delimiter = ',', num_args = 2.., default_value = "16,12,10")]
        layers: Vec<usize>,
        #[arg(long, default_value_t = 0.05)]
        step: f64,
        #[arg(long, default_value_t = 200)]
        iters: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Render analysis artifacts from a metrics CSV and/or a checkpoint.
    Report {
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        kind: Vec<ReportKind>,
        /// Model checkpoint (required for latent/recon reports).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Dataset for latent/recon reports.
        #[arg(long, default_value = "synth")]
        dataset: String,
        #[arg(long)]
        data_root: Option<PathBuf>,
        /// Instances per class (latent) or total images (recon).
        #[arg(long, default_value_t = 50)]
        count: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineKind {
    Pca,
    Rp,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReportKind {
    Tradeoff,
    Scaling,
    Latent,
    Recon,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}

fn read_config(path: &Path) -> Result<RunConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    RunConfig::from_toml_str(&text).map_err(|e| e.to_string())
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Train { config, out, rotate_degrees } => {
            let mut config = read_config(&config)?;
            config.rotate_degrees = rotate_degrees;
            let record = run_training(&config, out.as_deref()).map_err(|e| e.to_string())?;
            if let Some(failure) = &record.failure {
                return Err(format!("run {} failed: {failure}", record.run_id));
            }
            println!("run {}", record.run_id);
            for m in &record.epochs {
                println!(
                    "epoch {:>3}  train acc {:.4} mse {:.5}  test acc {:.4} mse {:.5}  L {:.5}",
                    m.epoch, m.train.accuracy, m.train.mse, m.test.accuracy, m.test.mse, m.test.loss_total
                );
            }
            println!(
                "best accuracy {:.4} (epoch {:?})  best mse {:.5} (epoch {:?})",
                record.best_accuracy().unwrap_or(f64::NAN),
                record.best_accuracy_epoch,
                record.best_mse().unwrap_or(f64::NAN),
                record.best_mse_epoch
            );
            Ok(())
        }
        Command::Sweep { config, lambdas, seeds, out } => {
            let config = read_config(&config)?;
            let table = lambda_sweep(&config, &lambdas, &seeds, out.as_deref()).map_err(|e| e.to_string())?;
            println!("{:>8} {:>10} {:>10} {:>6}", "lambda", "mean acc", "mean mse", "runs");
            for &lambda in &table.lambdas {
                let runs = table.runs_at(lambda).count();
                println!(
                    "{:>8} {:>10.4} {:>10.5} {:>6}",
                    lambda,
                    table.mean_best_accuracy(lambda).unwrap_or(f64::NAN),
                    table.mean_best_mse(lambda).unwrap_or(f64::NAN),
                    runs
                );
            }
            for failed in table.runs.iter().filter(|r| !r.succeeded()) {
                println!("failed: {} ({})", failed.run_id, failed.failure.as_deref().unwrap_or("no epochs"));
            }
            Ok(())
        }
        Command::Baseline { config, kind, out } => baseline(&config, kind, out.as_deref()),
        Command::PcnDemo { layers, step, iters, seed } => {
            let mut model = PcnModel::init(&layers, PcnActivation::Tanh, seed);
            model.step = step;
            model.max_iters = iters;
            model.tol = 0.0; // print the full trace
            let mut state = PcnState::zeros(&model, 1);
            let mut image = Tensor::zeros(&[1, layers[0]]);
            let mut rng = rng_from_seed(seed);
            fill_normal(&mut rng, 0.5, image.data_mut());
            for v in image.data_mut() {
                *v = v.clamp(-1.0, 1.0);
            }
            state.clamp(0, image).map_err(|e| e.to_string())?;
            let energies = pcn_infer(&model, &mut state).map_err(|e| e.to_string())?;
            println!("iteration,energy");
            for (i, e) in energies.iter().enumerate() {
                println!("{i},{e}");
            }
            Ok(())
        }
        Command::Report {
            metrics,
            out,
            kind,
            checkpoint,
            dataset,
            data_root,
            count,
        } => report(metrics.as_deref(), &out, &kind, checkpoint.as_deref(), &dataset, data_root, count),
    }
}

fn baseline(config_path: &Path, kind: BaselineKind, out: Option<&Path>) -> Result<(), String> {
    let config = read_config(config_path)?;
    let train_full = load_split(&config, Split::Train).map_err(|e| e.to_string())?;
    let train = train_full.limit(config.limit, config.seed);
    let test = load_split(&config, Split::Test).map_err(|e| e.to_string())?;
    let d = train.pixels_per_image();
    let flat = |ds: &cre_core::data::Dataset| {
        Tensor::new(&[ds.len(), d], ds.images.data().to_vec()).expect("flatten")
    };
    let (label, train_feats, test_feats) = match kind {
        BaselineKind::Pca => {
            let basis = fit_pca(&flat(&train), config.n).map_err(|e| e.to_string())?;
            (
                "pca",
                basis.project(&flat(&train)).map_err(|e| e.to_string())?,
                basis.project(&flat(&test)).map_err(|e| e.to_string())?,
            )
        }
        BaselineKind::Rp => {
            let rp = RandomProjection::new(config.n, d, config.seed);
            (
                "rp",
                rp.project(&flat(&train)).map_err(|e| e.to_string())?,
                rp.project(&flat(&test)).map_err(|e| e.to_string())?,
            )
        }
    };
    let classifier = train_head(
        &train_feats,
        &train,
        &test_feats,
        &test,
        HeadKind::Classifier,
        config.epochs,
        config.batch_size,
        config.lr_classifier,
        config.seed,
    )
    .map_err(|e| e.to_string())?;
    let decoder = train_head(
        &train_feats,
        &train,
        &test_feats,
        &test,
        HeadKind::Decoder,
        config.epochs,
        config.batch_size,
        config.lr_decoder,
        config.seed,
    )
    .map_err(|e| e.to_string())?;
    println!(
        "{label} n={}: best accuracy {:.4} (epoch {}), best mse {:.5} (epoch {})",
        config.n,
        classifier.best_metric,
        classifier.best_epoch + 1,
        decoder.best_metric,
        decoder.best_epoch + 1
    );
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
        let run_id = format!("{label}-n{}-{}-s{}", config.n, config.dataset.as_str(), config.seed);
        let mut csv = String::from(CSV_HEADER);
        csv.push('\n');
        for ((epoch, acc), (_, mse)) in classifier.per_epoch.iter().zip(&decoder.per_epoch) {
            csv.push_str(&format!(
                "{run_id},{label},small,{},{},0,none,{},{},test,{},{},0,{},0\n",
                config.n,
                config.dataset.as_str(),
                config.seed,
                epoch + 1,
                acc,
                mse,
                mse
            ));
        }
        let path = dir.join(format!("{run_id}.csv"));
        std::fs::write(&path, csv).map_err(|e| e.to_string())?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn condition_tag(key: &cre_core::report::GroupKey) -> String {
    format!("{}-{}-n{}-{}-{}", key.family, key.size, key.n, key.dataset, key.masking_mode)
}

fn report(
    metrics: Option<&Path>,
    out: &Path,
    kinds: &[ReportKind],
    checkpoint: Option<&Path>,
    dataset: &str,
    data_root: Option<PathBuf>,
    count: usize,
) -> Result<(), String> {
    std::fs::create_dir_all(out).map_err(|e| e.to_string())?;
    let kinds: Vec<ReportKind> = if kinds.is_empty() {
        vec![ReportKind::Tradeoff, ReportKind::Scaling]
    } else {
        kinds.to_vec()
    };

    let summaries: Option<Vec<SweepSummary>> = match metrics {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            let rows = parse_metrics_csv(&text).map_err(|e| e.to_string())?;
            Some(summarize_rows(&rows))
        }
        None => None,
    };

    for kind in &kinds {
        match kind {
            ReportKind::Tradeoff => {
                let summaries = summaries.as_ref().ok_or("--metrics is required for tradeoff reports")?;
                // One chart per experimental condition, boxes across lambda.
                let mut conditions: BTreeMap<String, Vec<SweepSummary>> = BTreeMap::new();
                for s in summaries {
                    conditions.entry(condition_tag(&s.key)).or_default().push(s.clone());
                }
                for (tag, group) in conditions {
                    if group.len() < 2 {
                        eprintln!("skipping {tag}: needs at least two lambda groups");
                        continue;
                    }
                    let doc = plot_tradeoff(&group);
                    let path = out.join(format!("tradeoff_{tag}.svg"));
                    std::fs::write(&path, doc).map_err(|e| e.to_string())?;
                    println!("wrote {}", path.display());
                }
            }
            ReportKind::Scaling => {
                let summaries = summaries.as_ref().ok_or("--metrics is required for scaling reports")?;
                for (metric, file) in [("accuracy", "scaling_accuracy.svg"), ("reconstruction MSE", "scaling_mse.svg")] {
                    let mut series_map: BTreeMap<String, Vec<ScalingPoint>> = BTreeMap::new();
                    for s in summaries {
                        let label = if s.key.family == "pca" || s.key.family == "rp" {
                            s.key.family.clone()
                        } else {
                            format!("lambda={}", s.key.lambda())
                        };
                        let m = if metric == "accuracy" { &s.accuracy } else { &s.mse };
                        series_map.entry(label).or_default().push(ScalingPoint {
                            n: s.key.n,
                            mean: m.mean,
                            half_width: m.half_width,
                        });
                    }
                    let mut series: Vec<ScalingSeries> = series_map
                        .into_iter()
                        .map(|(label, mut points)| {
                            points.sort_by_key(|p| p.n);
                            ScalingSeries { label, points }
                        })
                        .collect();
                    series.retain(|s| !s.points.is_empty());
                    let distinct: std::collections::BTreeSet<usize> =
                        series.iter().flat_map(|s| s.points.iter().map(|p| p.n)).collect();
                    if distinct.len() < 2 {
                        eprintln!("skipping scaling ({metric}): needs at least two distinct n");
                        continue;
                    }
                    let doc = plot_scaling(&series, metric);
                    let path = out.join(file);
                    std::fs::write(&path, doc).map_err(|e| e.to_string())?;
                    println!("wrote {}", path.display());
                }
            }
            ReportKind::Latent => {
                let ckpt = checkpoint.ok_or("--checkpoint is required for latent reports")?;
                let mut model = load_model(ckpt).map_err(|e| e.to_string())?;
                if model.n > 3 {
                    eprintln!("note: latent dimension {} > 3; the export is exact but hard to visualize", model.n);
                }
                let ds = load_named_split(dataset, data_root.as_deref(), Split::Test)?;
                let csv = export_latent(&mut model, &ds, count).map_err(|e| e.to_string())?;
                let path = out.join("latent.csv");
                std::fs::write(&path, csv).map_err(|e| e.to_string())?;
                println!("wrote {}", path.display());
            }
            ReportKind::Recon => {
                let ckpt = checkpoint.ok_or("--checkpoint is required for recon reports")?;
                let mut model = load_model(ckpt).map_err(|e| e.to_string())?;
                let ds = load_named_split(dataset, data_root.as_deref(), Split::Test)?;
                let count = count.min(64).min(ds.len());
                let indices: Vec<usize> = (0..count).collect();
                let (images, _) = ds.gather_batch(&indices);
                let grid = reconstruction_grid(&mut model, &images).map_err(|e| e.to_string())?;
                let ext = if grid.channels == 3 { "ppm" } else { "pgm" };
                let path = out.join(format!("reconstructions.{ext}"));
                std::fs::write(&path, &grid.bytes).map_err(|e| e.to_string())?;
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn load_named_split(name: &str, data_root: Option<&Path>, split: Split) -> Result<cre_core::data::Dataset, String> {
    // Reuse the harness loader by building a minimal config.
    let toml = format!(
        "family = \"fc\"\nsize = \"small\"\ndataset = \"{name}\"\nlambda = 0.0\n{}",
        data_root
            .map(|p| format!("data_root = \"{}\"\n", p.display()))
            .unwrap_or_default()
    );
    let config = RunConfig::from_toml_str(&toml).map_err(|e| e.to_string())?;
    load_split(&config, split).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;
    use cre_core::harness::metrics_csv_string;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn metrics_csv_header_matches_harness() {
        assert!(metrics_csv_string(&[]).starts_with(CSV_HEADER));
    }
}
