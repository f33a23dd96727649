use cre_core::harness::*;
use cre_core::zoo::{Family, MaskingMode, SizeClass};

fn main() {
    for (lambda, seed) in [(0.0f64, 42u64), (0.2, 42), (0.6, 42), (0.9, 42), (1.0, 42), (0.0, 7), (1.0, 7)] {
        let config = RunConfig {
            family: Family::Fc, size: SizeClass::Small, n: 16,
            dataset: DatasetName::Synth, data_root: None,
            lambda, masking_mode: MaskingMode::None, mask_ratio: 0.66,
            epochs: 20, batch_size: 128,
            lr_encoder: 0.001, lr_decoder: 0.001, lr_classifier: 0.001,
            seed, limit: 10_000, dropout: None, droppath: None, workers: 1, rotate_degrees: 15.0,
        };
        let r = run_training(&config, None).unwrap();
        let mut model = reload(&r);
        let test = load_split(&config, cre_core::data::Split::Test).unwrap();
        let z = model.encode(&test.gather_batch(&(0..500).collect::<Vec<_>>()).0).unwrap();
        let dead = z.data.data().iter().filter(|v| **v == 0.0).count() as f64 / z.data.len() as f64;
        println!("lambda={lambda} seed={seed}: acc={:.4} mse={:.5} (ep {}) dead={:.3}",
            r.best_accuracy().unwrap(), r.best_mse().unwrap(), r.best_mse_epoch.unwrap(), dead);
    }
}
// rebuild a fresh model matching the run config just for dead-unit stats
fn reload(r: &cre_core::harness::RunRecord) -> cre_core::zoo::CreModel {
    r.config.build_model().unwrap()
}
