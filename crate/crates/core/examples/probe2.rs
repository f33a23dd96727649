use cre_core::data::{synth, Split};
use cre_core::harness::*;
use cre_core::nn::FwdCtx;
use cre_core::tensor::Graph;
use cre_core::zoo::{Family, MaskingMode, SizeClass};

fn main() {
    let config = RunConfig {
        family: Family::Fc, size: SizeClass::Small, n: 16,
        dataset: DatasetName::Synth, data_root: None,
        lambda: 1.0, masking_mode: MaskingMode::None, mask_ratio: 0.66,
        epochs: 6, batch_size: 128,
        lr_encoder: 0.001, lr_decoder: 0.001, lr_classifier: 0.001,
        seed: 42, limit: 2000, dropout: None, droppath: None, workers: 1, rotate_degrees: 15.0,
    };
    // replicate the training loop with latent instrumentation
    let train = synth::synthetic_digits(Split::Train, 2000);
    let mut model = config.build_model().unwrap();
    let per = train.pixels_per_image();
    let mut mean_img = cre_core::tensor::Tensor::zeros(&[1, 28, 28]);
    for image in train.images.data().chunks(per) {
        for (m, v) in mean_img.data_mut().iter_mut().zip(image) {
            *m += v / train.len() as f64;
        }
    }
    model.init_output_bias(&mean_img);
    let (mut oe, mut od, mut oc) = model.fresh_optimizers(0.0003, 0.001, 0.001);
    for epoch in 1..=config.epochs {
        let mut dead_frac = 0.0;
        let mut z_mag = 0.0;
        let mut batches = 0.0;
        let mut train_mse = 0.0;
        for (bi, idx) in cre_core::data::batch_indices(train.len(), 128, Some(epoch as u64)).into_iter().enumerate() {
            let (images, labels) = train.gather_batch(&idx);
            let mut g = Graph::new();
            let x = g.leaf(images).unwrap();
            let mut ctx = FwdCtx::train(bi as u64 + epoch as u64 * 1000);
            let nodes = model.forward_nodes(&mut g, x, None, &mut ctx).unwrap();
            let losses = model.loss_nodes(&mut g, nodes.reconstruction, x, nodes.logits, &labels, None).unwrap();
            let z = g.value(nodes.latent);
            let zero = z.data().iter().filter(|v| **v == 0.0).count();
            dead_frac += zero as f64 / z.len() as f64;
            z_mag += z.data().iter().map(|v| v.abs()).sum::<f64>() / z.len() as f64;
            train_mse += g.scalar_value(losses.mse);
            batches += 1.0;
            g.backward(losses.mse).unwrap();
            cre_core::nn::adam_apply(model.decoder_module(), &mut od, &nodes.decoder_binds, &g).unwrap();
            g.backward(losses.ce).unwrap();
            cre_core::nn::adam_apply(model.classifier_module(), &mut oc, &nodes.classifier_binds, &g).unwrap();
            g.backward(losses.total).unwrap();
            cre_core::nn::adam_apply(model.encoder_module(), &mut oe, &nodes.encoder_binds, &g).unwrap();
        }
        println!("epoch {epoch}: dead_z={:.3} |z|={:.4} train_mse={:.5}", dead_frac / batches, z_mag / batches, train_mse / batches);
    }
}
