use cre_core::harness::*;
use cre_core::zoo::{Family, MaskingMode, SizeClass};

fn main() {
    for lr_enc in [0.001f64, 0.0003, 0.0001] {
        let config = RunConfig {
            family: Family::Fc, size: SizeClass::Small, n: 16,
            dataset: DatasetName::Synth, data_root: None,
            lambda: 1.0, masking_mode: MaskingMode::None, mask_ratio: 0.66,
            epochs: 10, batch_size: 128,
            lr_encoder: lr_enc, lr_decoder: 0.001, lr_classifier: 0.001,
            seed: 42, limit: 4000, dropout: None, droppath: None, workers: 1, rotate_degrees: 15.0,
        };
        let record = run_training(&config, None).unwrap();
        println!(
            "lr_enc={lr_enc}: best_acc={:.4} best_mse={:.5}",
            record.best_accuracy().unwrap(),
            record.best_mse().unwrap(),
        );
    }
}
