use cre_core::harness::*;
use cre_core::zoo::{Family, MaskingMode, SizeClass};

fn main() {
    let config = RunConfig {
        family: Family::Fc, size: SizeClass::Small, n: 16,
        dataset: DatasetName::Synth, data_root: None,
        lambda: 1.0, masking_mode: MaskingMode::None, mask_ratio: 0.66,
        epochs: 60, batch_size: 128,
        lr_encoder: 0.001, lr_decoder: 0.001, lr_classifier: 0.001,
        seed: 42, limit: 10_000, dropout: None, droppath: None, workers: 1, rotate_degrees: 15.0,
    };
    let r = run_training(&config, None).unwrap();
    for m in r.epochs.iter().step_by(5) {
        println!("epoch {:>2}: test mse={:.5} acc={:.4}", m.epoch, m.test.mse, m.test.accuracy);
    }
    println!("best mse={:.5}", r.best_mse().unwrap());
}
