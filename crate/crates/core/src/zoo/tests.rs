use super::*;
use crate::rng::{fill_normal, rng_from_seed};

fn randn_images(batch: usize, shape: (usize, usize, usize), seed: u64) -> Tensor {
    let mut rng = rng_from_seed(seed);
    let mut t = Tensor::zeros(&[batch, shape.0, shape.1, shape.2]);
    fill_normal(&mut rng, 0.4, t.data_mut());
    for v in t.data_mut() {
        *v = v.clamp(-1.0, 1.0);
    }
    t
}

fn build(family: Family, size: SizeClass, n: usize, masking: MaskingMode) -> CreModel {
    let input = match (family, size) {
        (Family::Cnn, SizeClass::Large) | (Family::Vit, SizeClass::Large) => (3, 32, 32),
        _ => (1, 28, 28),
    };
    build_cre(family, size, n, input, masking, 0.66, 0.0, 0.0, 7).unwrap()
}

#[test]
fn fc_small_matches_catalog_shapes_and_counts() {
    let mut m = build(Family::Fc, SizeClass::Small, 16, MaskingMode::None);
    assert_eq!(m.encoder_module().param_count(), 784 * 16 + 16);
    assert_eq!(m.decoder_module().param_count(), 16 * 784 + 784);
    assert_eq!(m.classifier_module().param_count(), 16 * 10 + 10);

    let images = randn_images(3, (1, 28, 28), 1);
    let z = m.encode(&images).unwrap();
    assert_eq!(z.data.shape(), &[3, 16]);
    let recon = m.decode(&z).unwrap();
    assert_eq!(recon.shape(), &[3, 1, 28, 28]);
    assert!(recon.data().iter().all(|v| (-1.0..=1.0).contains(v)), "tanh range");
    let logits = m.classify(&z).unwrap();
    assert_eq!(logits.shape(), &[3, 10]);
}

#[test]
fn fc_medium_and_large_hidden_widths() {
    let mut medium = build(Family::Fc, SizeClass::Medium, 8, MaskingMode::None);
    // Flatten -> 616 -> n encoder; classifier via 12.
    assert_eq!(
        medium.encoder_module().param_count(),
        784 * 616 + 616 + 616 * 8 + 8
    );
    assert_eq!(medium.classifier_module().param_count(), 8 * 12 + 12 + 12 * 10 + 10);

    let mut large = build(Family::Fc, SizeClass::Large, 8, MaskingMode::None);
    assert_eq!(
        large.encoder_module().param_count(),
        784 * 716 + 716 + 716 * 684 + 684 + 684 * 616 + 616 + 616 * 8 + 8
    );
    let images = randn_images(2, (1, 28, 28), 2);
    let z = large.encode(&images).unwrap();
    assert_eq!(z.data.shape(), &[2, 8]);
}

#[test]
fn cnn_small_latent_is_16x4x4() {
    let mut m = build(Family::Cnn, SizeClass::Small, 0, MaskingMode::None);
    assert_eq!(m.n, 256);
    let images = randn_images(2, (1, 28, 28), 3);
    let z = m.encode(&images).unwrap();
    assert_eq!(z.data.shape(), &[2, 16, 4, 4]);
    let recon = m.decode(&z).unwrap();
    assert_eq!(recon.shape(), &[2, 1, 28, 28]);
    let logits = m.classify(&z).unwrap();
    assert_eq!(logits.shape(), &[2, 10]);
}

#[test]
fn cnn_large_chain_reproduces_catalog_shapes() {
    let mut m = build(Family::Cnn, SizeClass::Large, 0, MaskingMode::None);
    assert_eq!(m.n, 2048);
    let images = randn_images(2, (3, 32, 32), 4);
    let z = m.encode(&images).unwrap();
    assert_eq!(z.data.shape(), &[2, 128, 4, 4]);
    let recon = m.decode(&z).unwrap();
    assert_eq!(recon.shape(), &[2, 3, 32, 32]);
    let logits = m.classify(&z).unwrap();
    assert_eq!(logits.shape(), &[2, 10]);
}

#[test]
fn vit_small_token_flow_with_masking() {
    let mut m = build(Family::Vit, SizeClass::Small, 4, MaskingMode::V1);
    assert_eq!(m.num_patches(), 16);
    assert_eq!(m.patch_size(), 7);
    // 16 patches at ratio 0.66 keep 5 tokens.
    let mask = sample_mask(16, 0.66, 9);
    assert_eq!(mask.kept.len(), 5);
    assert_eq!(mask.masked.len(), 11);

    let images = randn_images(2, (1, 28, 28), 5);
    let masks = vec![mask.clone(), sample_mask(16, 0.66, 10)];
    let mut g = Graph::new();
    let x = g.leaf(images.clone()).unwrap();
    let mut ctx = crate::nn::FwdCtx::train(11);
    let nodes = m.forward_nodes(&mut g, x, Some(&masks), &mut ctx).unwrap();
    assert_eq!(g.value(nodes.latent).shape(), &[2, 5, 4]);
    assert_eq!(g.value(nodes.reconstruction).shape(), &[2, 1, 28, 28]);
    assert_eq!(g.value(nodes.logits).shape(), &[2, 10]);
}

#[test]
fn vit_eval_encodes_full_grid() {
    let mut m = build(Family::Vit, SizeClass::Small, 8, MaskingMode::V1);
    let images = randn_images(2, (1, 28, 28), 6);
    let z = m.encode(&images).unwrap();
    assert_eq!(z.data.shape(), &[2, 16, 8]);
    let recon = m.decode(&z).unwrap();
    assert_eq!(recon.shape(), &[2, 1, 28, 28]);
}

#[test]
fn vit_classify_is_token_permutation_invariant() {
    let mut m = build(Family::Vit, SizeClass::Small, 8, MaskingMode::None);
    let mut rng = rng_from_seed(31);
    let mut tokens = Tensor::zeros(&[2, 16, 8]);
    fill_normal(&mut rng, 1.0, tokens.data_mut());
    let repr = Representation {
        kind: ReprKind::Latent,
        data: tokens.clone(),
        kept_slots: None,
    };
    let logits = m.classify(&repr).unwrap();
    // Reverse the token order per sample.
    let mut reversed = Tensor::zeros(&[2, 16, 8]);
    for b in 0..2 {
        for t in 0..16 {
            let src = &tokens.data()[(b * 16 + t) * 8..(b * 16 + t + 1) * 8];
            reversed.data_mut()[(b * 16 + (15 - t)) * 8..(b * 16 + (16 - t)) * 8].copy_from_slice(src);
        }
    }
    let repr_rev = Representation {
        kind: ReprKind::Latent,
        data: reversed,
        kept_slots: None,
    };
    let logits_rev = m.classify(&repr_rev).unwrap();
    for (a, b) in logits.data().iter().zip(logits_rev.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn vit_all_equal_tokens_average_to_single_token() {
    let mut m = build(Family::Vit, SizeClass::Small, 8, MaskingMode::None);
    let mut one = Tensor::zeros(&[1, 1, 8]);
    for (i, v) in one.data_mut().iter_mut().enumerate() {
        *v = i as f64 / 10.0;
    }
    let mut all = Tensor::zeros(&[1, 16, 8]);
    for t in 0..16 {
        all.data_mut()[t * 8..(t + 1) * 8].copy_from_slice(one.data());
    }
    let la = m
        .classify(&Representation { kind: ReprKind::Latent, data: all, kept_slots: None })
        .unwrap();
    let lb = m
        .classify(&Representation { kind: ReprKind::Latent, data: one, kept_slots: None })
        .unwrap();
    for (a, b) in la.data().iter().zip(lb.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn masking_only_for_vit() {
    let err = build_cre(Family::Fc, SizeClass::Small, 8, (1, 28, 28), MaskingMode::V1, 0.66, 0.0, 0.0, 1);
    assert!(matches!(err, Err(ZooError::MaskingUnsupported)));
}

#[test]
fn unknown_combination_is_rejected() {
    let err = build_cre(Family::Cnn, SizeClass::Medium, 0, (1, 28, 28), MaskingMode::None, 0.66, 0.0, 0.0, 1);
    assert!(matches!(err, Err(ZooError::UnknownCombination { .. })));
}

#[test]
fn mask_sampling_is_deterministic_and_bounded() {
    let a = sample_mask(16, 0.66, 5);
    let b = sample_mask(16, 0.66, 5);
    assert_eq!(a, b);
    let c = sample_mask(16, 0.66, 6);
    assert_ne!(a, c);
    // near-zero ratio keeps everything
    let full = sample_mask(16, 1e-9, 1);
    assert_eq!(full.kept.len(), 16);
    // extreme ratio keeps at least one
    let min = sample_mask(16, 0.999, 1);
    assert_eq!(min.kept.len(), 1);
    // kept and masked partition the patch set
    let mut union: Vec<usize> = a.kept.iter().chain(a.masked.iter()).copied().collect();
    union.sort_unstable();
    assert_eq!(union, (0..16).collect::<Vec<_>>());
}

#[test]
fn eq1_is_linear_in_lambda() {
    let mut m = build(Family::Fc, SizeClass::Small, 8, MaskingMode::None);
    let images = randn_images(4, (1, 28, 28), 7);
    let labels = [0usize, 3, 5, 9];
    let mut at = |lambda: f64| {
        m.lambda = lambda;
        m.cre_loss(&images, &labels, 99).unwrap()
    };
    let (_, mse0, ce0) = at(0.0);
    for lambda in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let (total, mse, ce) = at(lambda);
        assert!((mse - mse0).abs() < 1e-12, "sub-losses independent of lambda");
        assert!((ce - ce0).abs() < 1e-12);
        let want = lambda * mse + (1.0 - lambda) * ce;
        assert!((total - want).abs() < 1e-12, "lambda {lambda}");
    }
}

#[test]
fn eq1_endpoints_reduce_to_single_losses() {
    let mut m = build(Family::Fc, SizeClass::Small, 8, MaskingMode::None);
    let images = randn_images(4, (1, 28, 28), 8);
    let labels = [1usize, 2, 4, 8];
    m.lambda = 0.0;
    let (total, _, ce) = m.cre_loss(&images, &labels, 3).unwrap();
    assert_eq!(total, ce);
    m.lambda = 1.0;
    let (total, mse, _) = m.cre_loss(&images, &labels, 3).unwrap();
    assert_eq!(total, mse);
    m.lambda = 0.5;
    let mse_fixed = 2.0_f64;
    let ce_fixed = 4.0_f64;
    assert_eq!(0.5 * mse_fixed + 0.5 * ce_fixed, 3.0);
}

#[test]
fn gradient_routing_at_lambda_endpoints() {
    let images = randn_images(4, (1, 28, 28), 9);
    let labels = [0usize, 1, 2, 3];

    // lambda = 1: classifier gets zero gradient from L; encoder gradient
    // from L equals its gradient from L_MSE alone, exactly.
    let mut m = build(Family::Fc, SizeClass::Small, 8, MaskingMode::None);
    m.lambda = 1.0;
    let mut g = Graph::new();
    let x = g.leaf(images.clone()).unwrap();
    let mut ctx = crate::nn::FwdCtx::eval();
    let nodes = m.forward_nodes(&mut g, x, None, &mut ctx).unwrap();
    let losses = m.loss_nodes(&mut g, nodes.reconstruction, x, nodes.logits, &labels, None).unwrap();
    g.backward(losses.total).unwrap();
    for (_, id) in &nodes.classifier_binds.entries {
        let grad = g.grad(*id).unwrap();
        assert!(grad.data().iter().all(|v| *v == 0.0), "classifier grad must be exactly zero");
    }
    let enc_from_total: Vec<Vec<f64>> = nodes
        .encoder_binds
        .entries
        .iter()
        .map(|(_, id)| g.grad(*id).unwrap().into_data())
        .collect();
    g.backward(losses.mse).unwrap();
    for ((_, id), want) in nodes.encoder_binds.entries.iter().zip(&enc_from_total) {
        assert_eq!(g.grad(*id).unwrap().data(), &want[..], "lambda=1 encoder grads come from MSE alone");
    }

    // lambda = 0: decoder gets zero gradient from L; encoder gradient
    // equals the CE gradient.
    let mut m0 = build(Family::Fc, SizeClass::Small, 8, MaskingMode::None);
    m0.lambda = 0.0;
    let mut g0 = Graph::new();
    let x0 = g0.leaf(images).unwrap();
    let mut ctx0 = crate::nn::FwdCtx::eval();
    let nodes0 = m0.forward_nodes(&mut g0, x0, None, &mut ctx0).unwrap();
    let losses0 = m0.loss_nodes(&mut g0, nodes0.reconstruction, x0, nodes0.logits, &labels, None).unwrap();
    g0.backward(losses0.total).unwrap();
    for (_, id) in &nodes0.decoder_binds.entries {
        let grad = g0.grad(*id).unwrap();
        assert!(grad.data().iter().all(|v| *v == 0.0), "decoder grad must be exactly zero");
    }
    let enc_from_total0: Vec<Vec<f64>> = nodes0
        .encoder_binds
        .entries
        .iter()
        .map(|(_, id)| g0.grad(*id).unwrap().into_data())
        .collect();
    g0.backward(losses0.ce).unwrap();
    for ((_, id), want) in nodes0.encoder_binds.entries.iter().zip(&enc_from_total0) {
        assert_eq!(g0.grad(*id).unwrap().data(), &want[..], "lambda=0 encoder grads come from CE alone");
    }
}

#[test]
fn encode_is_deterministic_for_identical_inputs() {
    let mut m = build(Family::Vit, SizeClass::Small, 8, MaskingMode::None);
    let images = randn_images(2, (1, 28, 28), 10);
    let a = m.encode(&images).unwrap();
    let b = m.encode(&images).unwrap();
    assert_eq!(a.data.data(), b.data.data());
}

#[test]
fn v1_loss_uses_masked_patches_v2_full_image() {
    let images = randn_images(2, (1, 28, 28), 12);
    let labels = [3usize, 4];
    let mut v1 = build(Family::Vit, SizeClass::Small, 8, MaskingMode::V1);
    v1.lambda = 1.0;
    let mut v2 = build(Family::Vit, SizeClass::Small, 8, MaskingMode::V2);
    v2.lambda = 1.0;
    let (_, mse_v1, _) = v1.cre_loss(&images, &labels, 77).unwrap();
    let (_, mse_v2, _) = v2.cre_loss(&images, &labels, 77).unwrap();
    // v1 averages over the masked patches, v2 over every pixel; with the
    // same seed and untrained weights the quantities differ.
    assert_ne!(mse_v1, mse_v2);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = std::env::temp_dir().join("cre-zoo-tests");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("model.ckpt");
    let mut m = build(Family::Vit, SizeClass::Small, 8, MaskingMode::V2);
    m.lambda = 0.35;
    save_model(&mut m, &path).unwrap();
    let mut loaded = load_model(&path).unwrap();
    assert_eq!(loaded.lambda, 0.35);
    assert_eq!(loaded.masking, MaskingMode::V2);
    let mut orig = Vec::new();
    m.encoder_module().for_each_param(&mut |n, t| orig.push((n.to_string(), t.clone())));
    let mut back = Vec::new();
    loaded.encoder_module().for_each_param(&mut |n, t| back.push((n.to_string(), t.clone())));
    assert_eq!(orig.len(), back.len());
    for ((n1, t1), (n2, t2)) in orig.iter().zip(&back) {
        assert_eq!(n1, n2);
        let bits1: Vec<u64> = t1.data().iter().map(|v| v.to_bits()).collect();
        let bits2: Vec<u64> = t2.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits1, bits2, "tensor {n1}");
    }
    // The loaded model computes identical outputs.
    let images = randn_images(2, (1, 28, 28), 13);
    let za = m.encode(&images).unwrap();
    let zb = loaded.encode(&images).unwrap();
    assert_eq!(za.data.data(), zb.data.data());
}

#[test]
fn zero_image_yields_finite_latent() {
    let mut m = build(Family::Fc, SizeClass::Small, 16, MaskingMode::None);
    let images = Tensor::zeros(&[1, 1, 28, 28]);
    let z = m.encode(&images).unwrap();
    assert_eq!(z.data.shape(), &[1, 16]);
    assert!(z.data.is_finite());
}
