use cre_core::harness::*;
use cre_core::nn::Module;
use cre_core::zoo::{Family, MaskingMode, SizeClass};

fn main() {
    // Full grid, current corpus, batch 128, defaults.
    for lambda in [0.0f64, 0.2, 0.6, 0.9, 1.0] {
        let config = RunConfig {
            family: Family::Fc, size: SizeClass::Small, n: 16,
            dataset: DatasetName::Synth, data_root: None,
            lambda, masking_mode: MaskingMode::None, mask_ratio: 0.66,
            epochs: 20, batch_size: 128,
            lr_encoder: 0.001, lr_decoder: 0.001, lr_classifier: 0.001,
            seed: 42, limit: 10_000, dropout: None, droppath: None, workers: 1, rotate_degrees: 15.0,
        };
        let r = run_training(&config, None).unwrap();
        let best_mse_ep = r.best_mse_epoch.unwrap();
        println!("lambda={lambda}: acc={:.4} mse={:.5} (mse epoch {best_mse_ep}/20)",
            r.best_accuracy().unwrap(), r.best_mse().unwrap());
    }
    // Encoder bias +0.3 variant at lambda=1 (hand-patched after build).
    let config = RunConfig {
        family: Family::Fc, size: SizeClass::Small, n: 16,
        dataset: DatasetName::Synth, data_root: None,
        lambda: 1.0, masking_mode: MaskingMode::None, mask_ratio: 0.66,
        epochs: 20, batch_size: 128,
        lr_encoder: 0.001, lr_decoder: 0.001, lr_classifier: 0.001,
        seed: 42, limit: 10_000, dropout: None, droppath: None, workers: 1, rotate_degrees: 15.0,
    };
    use cre_core::data::{synth, Split};
    use cre_core::nn::FwdCtx;
    use cre_core::tensor::Graph;
    let train = synth::synthetic_digits(Split::Train, 12000).limit(10000, 123);
    let test = synth::synthetic_digits(Split::Test, 2000);
    let mut model = config.build_model().unwrap();
    let per = train.pixels_per_image();
    let mut mean_img = cre_core::tensor::Tensor::zeros(&[1, 28, 28]);
    for image in train.images.data().chunks(per) {
        for (m, v) in mean_img.data_mut().iter_mut().zip(image) { *m += v / train.len() as f64; }
    }
    model.init_output_bias(&mean_img);
    model.encoder_module().for_each_param_mut(&mut |name, t| {
        if name.ends_with(".bias") { for v in t.data_mut() { *v = 0.3; } }
    });
    let (mut oe, mut od, mut oc) = model.fresh_optimizers(0.001, 0.001, 0.001);
    for epoch in 1..=20u64 {
        for (bi, idx) in cre_core::data::batch_indices(train.len(), 128, Some(epoch)).into_iter().enumerate() {
            let (images, labels) = train.gather_batch(&idx);
            let mut g = Graph::new();
            let x = g.leaf(images).unwrap();
            let mut ctx = FwdCtx::train(bi as u64 + epoch * 1000);
            let nodes = model.forward_nodes(&mut g, x, None, &mut ctx).unwrap();
            let losses = model.loss_nodes(&mut g, nodes.reconstruction, x, nodes.logits, &labels, None).unwrap();
            g.backward(losses.mse).unwrap();
            cre_core::nn::adam_apply(model.decoder_module(), &mut od, &nodes.decoder_binds, &g).unwrap();
            g.backward(losses.ce).unwrap();
            cre_core::nn::adam_apply(model.classifier_module(), &mut oc, &nodes.classifier_binds, &g).unwrap();
            g.backward(losses.total).unwrap();
            cre_core::nn::adam_apply(model.encoder_module(), &mut oe, &nodes.encoder_binds, &g).unwrap();
        }
    }
    let row = evaluate(&mut model, &test, 128).unwrap();
    let z = model.encode(&test.gather_batch(&(0..500).collect::<Vec<_>>()).0).unwrap();
    let dead = z.data.data().iter().filter(|v| **v == 0.0).count() as f64 / z.data.len() as f64;
    println!("enc-bias+0.3 lambda=1: acc={:.4} mse={:.5} dead={:.3}", row.accuracy, row.mse, dead);
}
