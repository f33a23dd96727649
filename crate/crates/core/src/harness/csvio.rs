//! The metrics CSV: one row per (epoch, split), pinned header, plain
//! decimal formatting.

use super::{HarnessError, MetricRow, Result, RunRecord};
use std::path::Path;

pub const CSV_HEADER: &str =
    "run_id,family,size,n,dataset,lambda,masking_mode,seed,epoch,split,accuracy,mse,loss_total,loss_mse,loss_ce";

fn push_row(out: &mut String, record: &RunRecord, epoch: usize, split: &str, row: &MetricRow) {
    use std::fmt::Write;
    writeln!(
        out,
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        record.run_id,
        record.config.family.as_str(),
        record.config.size.as_str(),
        record.config.n,
        record.config.dataset.as_str(),
        record.config.lambda,
        record.config.masking_mode.as_str(),
        record.config.seed,
        epoch,
        split,
        row.accuracy,
        row.mse,
        row.loss_total,
        row.loss_mse,
        row.loss_ce
    )
    .expect("string write");
}

/// Renders the pinned CSV for a set of runs (deterministic).
pub fn metrics_csv_string(records: &[RunRecord]) -> String {
    let mut out = String::new();
    out.push_str(CSV_HEADER);
    out.push('\n');
    for record in records {
        for m in &record.epochs {
            push_row(&mut out, record, m.epoch, "train", &m.train);
            push_row(&mut out, record, m.epoch, "test", &m.test);
        }
    }
    out
}

pub fn write_metrics_csv(path: &Path, records: &[RunRecord]) -> std::io::Result<()> {
    std::fs::write(path, metrics_csv_string(records))
}

/// One parsed CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub run_id: String,
    pub family: String,
    pub size: String,
    pub n: usize,
    pub dataset: String,
    pub lambda: f64,
    pub masking_mode: String,
    pub seed: u64,
    pub epoch: usize,
    pub split: String,
    pub accuracy: f64,
    pub mse: f64,
    pub loss_total: f64,
    pub loss_mse: f64,
    pub loss_ce: f64,
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| HarnessError::Config("metrics csv is empty".into()))?;
    if header != CSV_HEADER {
        return Err(HarnessError::Config(format!("unexpected csv header: {header}")));
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 15 {
            return Err(HarnessError::Config(format!(
                "line {}: expected 15 fields, found {}",
                lineno + 2,
                fields.len()
            )));
        }
        let bad = |what: &str| HarnessError::Config(format!("line {}: bad {what}", lineno + 2));
        rows.push(CsvRow {
            run_id: fields[0].to_string(),
            family: fields[1].to_string(),
            size: fields[2].to_string(),
            n: fields[3].parse().map_err(|_| bad("n"))?,
            dataset: fields[4].to_string(),
            lambda: fields[5].parse().map_err(|_| bad("lambda"))?,
            masking_mode: fields[6].to_string(),
            seed: fields[7].parse().map_err(|_| bad("seed"))?,
            epoch: fields[8].parse().map_err(|_| bad("epoch"))?,
            split: fields[9].to_string(),
            accuracy: fields[10].parse().map_err(|_| bad("accuracy"))?,
            mse: fields[11].parse().map_err(|_| bad("mse"))?,
            loss_total: fields[12].parse().map_err(|_| bad("loss_total"))?,
            loss_mse: fields[13].parse().map_err(|_| bad("loss_mse"))?,
            loss_ce: fields[14].parse().map_err(|_| bad("loss_ce"))?,
        });
    }
    Ok(rows)
}
