use cre_core::harness::*;
use cre_core::zoo::{Family, MaskingMode, SizeClass};

fn main() {
    // Criterion-8 shape: tiny vit embed 16, 1 block, lambda=1, v1 vs none.
    for masking in [MaskingMode::V1, MaskingMode::None] {
        for seed in [1u64, 2] {
            let config = RunConfig {
                family: Family::Vit, size: SizeClass::Small, n: 16,
                dataset: DatasetName::Synth, data_root: None,
                lambda: 1.0, masking_mode: masking, mask_ratio: 0.66,
                epochs: 12, batch_size: 128,
                lr_encoder: 0.001, lr_decoder: 0.001, lr_classifier: 0.001,
                seed, limit: 10_000, dropout: None, droppath: None, workers: 1, rotate_degrees: 15.0,
            };
            let t0 = std::time::Instant::now();
            let r = run_training(&config, None).unwrap();
            println!("masking={:?} seed={seed}: acc={:.4} mse={:.5} ({:.0}s)",
                masking, r.best_accuracy().unwrap(), r.best_mse().unwrap(), t0.elapsed().as_secs_f64());
        }
    }
}
