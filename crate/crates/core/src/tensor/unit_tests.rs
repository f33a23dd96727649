use super::*;
use crate::rng::{fill_normal, rng_from_seed};

fn randn(shape: &[usize], seed: u64, std: f64) -> Tensor {
    let mut rng = rng_from_seed(seed);
    let mut data = vec![0.0; shape.iter().product()];
    fill_normal(&mut rng, std, &mut data);
    Tensor::new(shape, data).unwrap()
}

#[test]
fn relu_clamps_negatives() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::new(&[3], vec![-1.0, 0.0, 2.0]).unwrap()).unwrap();
    let y = g.relu(x);
    assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
}

#[test]
fn matmul_identity_preserves_matrix() {
    let mut g = Graph::new();
    let a_val = randn(&[3, 3], 7, 1.0);
    let eye = g.leaf(Tensor::eye(3)).unwrap();
    let a = g.leaf(a_val.clone()).unwrap();
    let y = g.matmul(eye, a).unwrap();
    assert_eq!(g.value(y).data(), a_val.data());
}

#[test]
fn softmax_uniform_logits() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::new(&[1, 4], vec![0.0; 4]).unwrap()).unwrap();
    let y = g.softmax(x);
    for v in g.value(y).data() {
        assert!((v - 0.25).abs() < 1e-15);
    }
}

#[test]
fn backward_of_mean_square_is_two_x_over_n() {
    let mut g = Graph::new();
    let x = g.param(&Tensor::new(&[1], vec![3.0]).unwrap()).unwrap();
    let sq = g.mul(x, x).unwrap();
    let loss = g.mean_all(sq).unwrap();
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[6.0]);
}

#[test]
fn non_participating_leaf_gets_zero_gradient() {
    let mut g = Graph::new();
    let x = g.param(&Tensor::new(&[2], vec![1.0, 2.0]).unwrap()).unwrap();
    let w = g.param(&Tensor::new(&[2], vec![5.0, 5.0]).unwrap()).unwrap();
    let loss = g.mean_all(x).unwrap();
    g.backward(loss).unwrap();
    assert_eq!(g.grad(w).unwrap().data(), &[0.0, 0.0]);
}

#[test]
fn backward_requires_scalar_loss() {
    let mut g = Graph::new();
    let x = g.param(&Tensor::new(&[2], vec![1.0, 2.0]).unwrap()).unwrap();
    let y = g.relu(x);
    assert!(matches!(g.backward(y), Err(TensorError::LossNotScalar { .. })));
}

#[test]
fn two_layer_mlp_matches_central_differences() {
    let mut g = Graph::new();
    let x = g.leaf(randn(&[2, 5], 11, 1.0)).unwrap();
    let w1 = g.param(&randn(&[5, 4], 12, 0.6)).unwrap();
    let b1 = g.param(&randn(&[4], 13, 0.1)).unwrap();
    let w2 = g.param(&randn(&[4, 3], 14, 0.6)).unwrap();
    let b2 = g.param(&randn(&[3], 15, 0.1)).unwrap();
    let h = g.matmul(x, w1).unwrap();
    let h = g.add(h, b1).unwrap();
    let h = g.relu(h);
    let o = g.matmul(h, w2).unwrap();
    let o = g.add(o, b2).unwrap();
    let sq = g.mul(o, o).unwrap();
    let loss = g.mean_all(sq).unwrap();
    let report = grad_check(&mut g, loss, &[w1, b1, w2, b2], 1e-4, 1e-4, None).unwrap();
    assert!(report.passed(), "max rel err {}", report.max_rel_err());
}

#[test]
fn conv2d_one_by_one_unit_kernel_is_identity() {
    let mut g = Graph::new();
    let x_val = randn(&[1, 1, 4, 4], 3, 1.0);
    let x = g.leaf(x_val.clone()).unwrap();
    let k = g.leaf(Tensor::new(&[1, 1, 1, 1], vec![1.0]).unwrap()).unwrap();
    let y = g.conv2d(x, k, None, 1, 0).unwrap();
    assert_eq!(g.value(y).data(), x_val.data());
}

#[test]
fn conv2d_zero_input_gives_zero_output() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::zeros(&[1, 2, 5, 5])).unwrap();
    let k = g.leaf(randn(&[3, 2, 3, 3], 4, 1.0)).unwrap();
    let y = g.conv2d(x, k, None, 1, 0).unwrap();
    assert!(g.value(y).data().iter().all(|v| *v == 0.0));
}

#[test]
fn conv2d_rejects_oversized_kernel() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::zeros(&[1, 1, 3, 3])).unwrap();
    let k = g.leaf(Tensor::zeros(&[1, 1, 5, 5])).unwrap();
    assert!(g.conv2d(x, k, None, 1, 0).is_err());
}

#[test]
fn maxpool_basic_window() {
    let mut g = Graph::new();
    let x = g
        .leaf(Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap())
        .unwrap();
    let y = g.maxpool2d(x, 2, 2, 0).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 1, 1, 1]);
    assert_eq!(g.value(y).data(), &[4.0]);
}

#[test]
fn maxpool_tie_routes_gradient_to_first_element() {
    let mut g = Graph::new();
    let x = g.param(&Tensor::full(&[1, 1, 2, 2], 5.0)).unwrap();
    let y = g.maxpool2d(x, 2, 2, 0).unwrap();
    assert_eq!(g.value(y).data(), &[5.0]);
    let loss = g.mean_all(y).unwrap();
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn maxpool_matches_bruteforce_oracle() {
    let x_val = randn(&[1, 1, 8, 8], 17, 1.0);
    let mut g = Graph::new();
    let x = g.leaf(x_val.clone()).unwrap();
    let y = g.maxpool2d(x, 2, 2, 0).unwrap();
    // Brute-force per-window max.
    let d = x_val.data();
    for i in 0..4 {
        for j in 0..4 {
            let mut want = f64::NEG_INFINITY;
            for ki in 0..2 {
                for kj in 0..2 {
                    want = want.max(d[(2 * i + ki) * 8 + 2 * j + kj]);
                }
            }
            assert_eq!(g.value(y).data()[i * 4 + j], want);
        }
    }
}

#[test]
fn layer_norm_constant_row_collapses_to_bias() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::full(&[1, 3], 1.0)).unwrap();
    let gain = g.leaf(Tensor::full(&[3], 1.0)).unwrap();
    let bias = g.leaf(Tensor::zeros(&[3])).unwrap();
    let y = g.layer_norm(x, gain, bias, 1e-5).unwrap();
    for v in g.value(y).data() {
        assert!(v.abs() < 1e-12);
    }
}

#[test]
fn layer_norm_symmetric_pair_shrinks_toward_unit() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::new(&[1, 2], vec![-1.0, 1.0]).unwrap()).unwrap();
    let gain = g.leaf(Tensor::full(&[2], 1.0)).unwrap();
    let bias = g.leaf(Tensor::zeros(&[2])).unwrap();
    let y = g.layer_norm(x, gain, bias, 1e-5).unwrap();
    let out = g.value(y).data();
    assert!(out[0] < 0.0 && out[1] > 0.0);
    assert!((out[1] - 1.0).abs() < 1e-4, "epsilon shrinkage only");
    assert!((out[0] + out[1]).abs() < 1e-12, "stays symmetric");
}

#[test]
fn layer_norm_output_statistics_property() {
    let x_val = randn(&[4, 16], 23, 2.0);
    let mut g = Graph::new();
    let x = g.leaf(x_val).unwrap();
    let gain = g.leaf(Tensor::full(&[16], 1.0)).unwrap();
    let bias = g.leaf(Tensor::zeros(&[16])).unwrap();
    let y = g.layer_norm(x, gain, bias, 1e-12).unwrap();
    for row in g.value(y).data().chunks(16) {
        let mean = row.iter().sum::<f64>() / 16.0;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 16.0;
        assert!(mean.abs() < 1e-10, "row mean {mean}");
        assert!((var - 1.0).abs() < 1e-9, "row var {var}");
    }
}

#[test]
fn reshape_adjoint_is_inverse_permutation() {
    let mut g = Graph::new();
    let x = g.param(&randn(&[2, 6], 31, 1.0)).unwrap();
    let r = g.reshape(x, &[3, 4]).unwrap();
    let w = g.leaf(randn(&[3, 4], 32, 1.0)).unwrap();
    let prod = g.mul(r, w).unwrap();
    let loss = g.mean_all(prod).unwrap();
    g.backward(loss).unwrap();
    // d loss / d x == reshape of d loss / d r, elementwise exact.
    let gx = g.grad(x).unwrap();
    let gr = g.grad_slice(r).unwrap();
    assert_eq!(gx.data(), gr);
}

#[test]
fn backward_is_linear_over_loss_sums() {
    let mut build = |seed: u64| {
        let mut g = Graph::new();
        let x = g.param(&randn(&[3, 3], seed, 1.0)).unwrap();
        let t = g.tanh(x);
        let l1 = g.mean_all(t).unwrap();
        let sq = g.mul(x, x).unwrap();
        let l2 = g.mean_all(sq).unwrap();
        (g, x, l1, l2)
    };
    let (mut g, x, l1, l2) = build(41);
    let sum = g.add(l1, l2).unwrap();
    g.backward(sum).unwrap();
    let g_sum = g.grad(x).unwrap();
    g.backward(l1).unwrap();
    let g1 = g.grad(x).unwrap();
    g.backward(l2).unwrap();
    let g2 = g.grad(x).unwrap();
    for ((s, a), b) in g_sum.data().iter().zip(g1.data()).zip(g2.data()) {
        assert!((s - (a + b)).abs() < 1e-12);
    }
}

#[test]
fn stochastic_ops_replay_bit_identically() {
    let build = |seed: u64| {
        let mut g = Graph::new();
        let x = g.leaf(randn(&[4, 8], 51, 1.0)).unwrap();
        let d = g.dropout(x, 0.4, seed, DropKind::Element).unwrap();
        let p = g.drop_path(d, 0.3, seed ^ 1).unwrap();
        g.value(p).clone()
    };
    let a = build(99);
    let b = build(99);
    let c = build(100);
    assert_eq!(a.data(), b.data());
    assert_ne!(a.data(), c.data());
}

#[test]
fn replay_reproduces_forward_bit_for_bit() {
    let mut g = Graph::new();
    let x = g.leaf(randn(&[2, 3, 4], 61, 1.0)).unwrap();
    let w = g.param(&randn(&[4, 4], 62, 0.5)).unwrap();
    let h = g.matmul(x, w).unwrap();
    let h = g.gelu(h);
    let s = g.softmax(h);
    let before: Vec<u64> = g.value(s).data().iter().map(|v| v.to_bits()).collect();
    g.replay();
    let after: Vec<u64> = g.value(s).data().iter().map(|v| v.to_bits()).collect();
    assert_eq!(before, after);
}

#[test]
fn gather_scatter_round_trip() {
    let mut g = Graph::new();
    let x_val = randn(&[2, 5, 3], 71, 1.0);
    let x = g.leaf(x_val.clone()).unwrap();
    let kept = [0usize, 2, 4];
    let gathered = g.gather_tokens(x, &kept).unwrap();
    let scattered = g.scatter_tokens(gathered, &kept, 5).unwrap();
    assert_eq!(g.value(scattered).shape(), &[2, 5, 3]);
    for b in 0..2 {
        for (slot, row) in g.value(scattered).data()[b * 15..(b + 1) * 15].chunks(3).enumerate() {
            if kept.contains(&slot) {
                assert_eq!(row, &x_val.data()[(b * 5 + slot) * 3..(b * 5 + slot + 1) * 3]);
            } else {
                assert!(row.iter().all(|v| *v == 0.0));
            }
        }
    }
}

#[test]
fn permute_then_inverse_is_identity() {
    let mut g = Graph::new();
    let x_val = randn(&[2, 3, 4, 5], 81, 1.0);
    let x = g.leaf(x_val.clone()).unwrap();
    let p = g.permute(x, &[2, 0, 3, 1]).unwrap();
    assert_eq!(g.value(p).shape(), &[4, 2, 5, 3]);
    let back = g.permute(p, &[1, 3, 0, 2]).unwrap();
    assert_eq!(g.value(back).data(), x_val.data());
}

#[test]
fn concat_splits_gradient_cleanly() {
    let mut g = Graph::new();
    let a = g.param(&randn(&[2, 2], 91, 1.0)).unwrap();
    let b = g.param(&randn(&[2, 3], 92, 1.0)).unwrap();
    let cat = g.concat(&[a, b], 1).unwrap();
    assert_eq!(g.value(cat).shape(), &[2, 5]);
    let loss = g.mean_all(cat).unwrap();
    let report = grad_check(&mut g, loss, &[a, b], 1e-4, 1e-4, None).unwrap();
    assert!(report.passed());
}

#[test]
fn slice_last_extracts_and_backpropagates() {
    let mut g = Graph::new();
    let x = g.param(&randn(&[2, 6], 93, 1.0)).unwrap();
    let s = g.slice_last(x, 2, 3).unwrap();
    assert_eq!(g.value(s).shape(), &[2, 3]);
    for r in 0..2 {
        assert_eq!(g.value(s).data()[r * 3..(r + 1) * 3], g.value(x).data()[r * 6 + 2..r * 6 + 5]);
    }
    let loss = g.mean_all(s).unwrap();
    let report = grad_check(&mut g, loss, &[x], 1e-4, 1e-4, None).unwrap();
    assert!(report.passed());
}

#[test]
fn non_finite_leaf_is_rejected() {
    let mut g = Graph::new();
    let err = g.leaf(Tensor::new(&[2], vec![1.0, f64::NAN]).unwrap());
    assert!(matches!(err, Err(TensorError::NonFinite { .. })));
}

#[test]
fn shape_mismatch_reports_op_and_shapes() {
    let mut g = Graph::new();
    let a = g.leaf(Tensor::zeros(&[2, 3])).unwrap();
    let b = g.leaf(Tensor::zeros(&[4, 5])).unwrap();
    let err = g.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("matmul") && msg.contains("[2, 3]") && msg.contains("[4, 5]"), "{msg}");
}

#[test]
fn every_op_kind_passes_finite_differences() {
    // One compact graph touching each differentiable op; details are
    // exercised per-op elsewhere, this guards the adjoint wiring.
    let mut g = Graph::new();
    let x = g.param(&randn(&[2, 2, 6, 6], 101, 0.7)).unwrap();
    let k = g.param(&randn(&[3, 2, 3, 3], 102, 0.4)).unwrap();
    let kb = g.param(&randn(&[3], 103, 0.1)).unwrap();
    let c = g.conv2d(x, k, Some(kb), 1, 1).unwrap();
    let p = g.maxpool2d(c, 2, 2, 0).unwrap();
    let r = g.relu(p);
    let tk = g.param(&randn(&[3, 2, 3, 3], 104, 0.4)).unwrap();
    let ct = g.conv_transpose2d(r, tk, None, 2, 1, 0).unwrap();
    let flat = g.reshape(ct, &[2, 2 * 5 * 5]).unwrap();
    let w = g.param(&randn(&[50, 8], 105, 0.3)).unwrap();
    let h = g.matmul(flat, w).unwrap();
    let gl = g.gelu(h);
    let ln_g = g.param(&Tensor::full(&[8], 1.0)).unwrap();
    let ln_b = g.param(&Tensor::zeros(&[8])).unwrap();
    let ln = g.layer_norm(gl, ln_g, ln_b, 1e-5).unwrap();
    let bn_g = g.param(&Tensor::full(&[8], 1.0)).unwrap();
    let bn_b = g.param(&Tensor::zeros(&[8])).unwrap();
    let bn = g.batch_norm_train(ln, bn_g, bn_b, 1e-5).unwrap();
    let t = g.tanh(bn);
    let d = g.dropout(t, 0.25, 7, DropKind::Element).unwrap();
    let ls = g.log_softmax(d);
    let sm = g.softmax(ls);
    let tokens = g.reshape(sm, &[2, 2, 4]).unwrap();
    let gathered = g.gather_tokens(tokens, &[1, 0]).unwrap();
    let scattered = g.scatter_tokens(gathered, &[0, 1], 2).unwrap();
    let perm = g.permute(scattered, &[0, 2, 1]).unwrap();
    let mean_tok = g.mean_over_axis(perm, 2).unwrap();
    let sliced = g.slice_last(mean_tok, 0, 3).unwrap();
    let picked = g.gather_labels(sliced, &[2, 0]).unwrap();
    let scaled = g.scale(picked, 1.7);
    let loss = g.mean_all(scaled).unwrap();
    let leaves = [x, k, kb, tk, w, ln_g, ln_b, bn_g, bn_b];
    let report = grad_check(&mut g, loss, &leaves, 1e-4, 1e-4, Some(60)).unwrap();
    assert!(report.passed(), "max rel err {}", report.max_rel_err());
}
