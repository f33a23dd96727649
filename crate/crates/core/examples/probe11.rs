use cre_core::harness::*;
use cre_core::zoo::{Family, MaskingMode, SizeClass};

fn main() {
    for masking in [MaskingMode::V1, MaskingMode::None] {
        let config = RunConfig {
            family: Family::Vit, size: SizeClass::Small, n: 16,
            dataset: DatasetName::Synth, data_root: None,
            lambda: 1.0, masking_mode: masking, mask_ratio: 0.66,
            epochs: 40, batch_size: 128,
            lr_encoder: 0.001, lr_decoder: 0.001, lr_classifier: 0.001,
            seed: 1, limit: 10_000, dropout: None, droppath: None, workers: 1, rotate_degrees: 15.0,
        };
        let r = run_training(&config, None).unwrap();
        print!("masking={:?}: ", masking);
        for m in r.epochs.iter().step_by(4) {
            print!("e{}={:.3} ", m.epoch, m.test.accuracy);
        }
        println!("| best={:.4}", r.best_accuracy().unwrap());
    }
}
