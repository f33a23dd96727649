use cre_core::data::{synth, Split};
use cre_core::harness::*;
use cre_core::nn::{FwdCtx, Module};
use cre_core::tensor::Graph;
use cre_core::zoo::{Family, MaskingMode, SizeClass};

fn main() {
    for (dec_scale, lr_enc) in [(1.0f64, 0.0003f64), (0.1, 0.0003), (0.02, 0.0003), (0.1, 0.001), (0.02, 0.001)] {
        let config = RunConfig {
            family: Family::Fc, size: SizeClass::Small, n: 16,
            dataset: DatasetName::Synth, data_root: None,
            lambda: 1.0, masking_mode: MaskingMode::None, mask_ratio: 0.66,
            epochs: 8, batch_size: 128,
            lr_encoder: lr_enc, lr_decoder: 0.001, lr_classifier: 0.001,
            seed: 42, limit: 4000, dropout: None, droppath: None, workers: 1, rotate_degrees: 15.0,
        };
        let train = synth::synthetic_digits(Split::Train, 4000);
        let test = synth::synthetic_digits(Split::Test, 1000);
        let mut model = config.build_model().unwrap();
        let per = train.pixels_per_image();
        let mut mean_img = cre_core::tensor::Tensor::zeros(&[1, 28, 28]);
        for image in train.images.data().chunks(per) {
            for (m, v) in mean_img.data_mut().iter_mut().zip(image) { *m += v / train.len() as f64; }
        }
        model.init_output_bias(&mean_img);
        // scale decoder weights (not biases)
        model.decoder_module().for_each_param_mut(&mut |name, t| {
            if name.ends_with(".weight") {
                for v in t.data_mut() { *v *= dec_scale; }
            }
        });
        let (mut oe, mut od, mut oc) = model.fresh_optimizers(lr_enc, 0.001, 0.001);
        for epoch in 1..=config.epochs {
            for (bi, idx) in cre_core::data::batch_indices(train.len(), 128, Some(epoch as u64)).into_iter().enumerate() {
                let (images, labels) = train.gather_batch(&idx);
                let mut g = Graph::new();
                let x = g.leaf(images).unwrap();
                let mut ctx = FwdCtx::train(bi as u64 + epoch as u64 * 1000);
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
        // final eval + dead fraction
        let row = evaluate(&mut model, &test, 128).unwrap();
        let z = model.encode(&test.gather_batch(&(0..200).collect::<Vec<_>>()).0).unwrap();
        let dead = z.data.data().iter().filter(|v| **v == 0.0).count() as f64 / z.data.len() as f64;
        println!("dec_scale={dec_scale} lr_enc={lr_enc}: acc={:.4} mse={:.5} dead_z={:.3}", row.accuracy, row.mse, dead);
    }
}
