use cre_core::harness::*;
use cre_core::zoo::{Family, MaskingMode, SizeClass};
use std::time::Instant;

fn main() {
    let base = RunConfig {
        family: Family::Fc,
        size: SizeClass::Small,
        n: 16,
        dataset: DatasetName::Synth,
        data_root: None,
        lambda: 0.0,
        masking_mode: MaskingMode::None,
        mask_ratio: 0.66,
        epochs: 20,
        batch_size: 128,
        lr_encoder: 0.001,
        lr_decoder: 0.001,
        lr_classifier: 0.001,
        seed: 42,
        limit: 10_000,
        dropout: None,
        droppath: None,
        workers: 1,
        rotate_degrees: 15.0,
    };
    for lambda in [0.0f64, 0.2, 0.6, 0.9, 1.0] {
        let mut c = base.clone();
        c.lambda = lambda;
        let t0 = Instant::now();
        let record = run_training(&c, None).unwrap();
        println!(
            "lambda={lambda}: best_acc={:.4} best_mse={:.5} last_acc={:.4} last_mse={:.5}  ({:.1}s)",
            record.best_accuracy().unwrap(),
            record.best_mse().unwrap(),
            record.epochs.last().unwrap().test.accuracy,
            record.epochs.last().unwrap().test.mse,
            t0.elapsed().as_secs_f64()
        );
    }
}
