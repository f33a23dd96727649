use cre_core::harness::*;
use cre_core::zoo::{Family, MaskingMode, SizeClass};

fn main() {
    for batch in [128usize, 64, 32] {
        for lambda in [0.0f64, 1.0] {
            let config = RunConfig {
                family: Family::Fc, size: SizeClass::Small, n: 16,
                dataset: DatasetName::Synth, data_root: None,
                lambda, masking_mode: MaskingMode::None, mask_ratio: 0.66,
                epochs: 20, batch_size: batch,
                lr_encoder: 0.001, lr_decoder: 0.001, lr_classifier: 0.001,
                seed: 42, limit: 10_000, dropout: None, droppath: None, workers: 1, rotate_degrees: 15.0,
            };
            let t0 = std::time::Instant::now();
            let r = run_training(&config, None).unwrap();
            println!("batch={batch} lambda={lambda}: acc={:.4} mse={:.5} ({:.0}s)",
                r.best_accuracy().unwrap(), r.best_mse().unwrap(), t0.elapsed().as_secs_f64());
        }
    }
}
