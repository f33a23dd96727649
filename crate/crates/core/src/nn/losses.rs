//! The two training losses, built from tape primitives.

use super::{NnError, Result};
use crate::tensor::{Graph, NodeId, Tensor, TensorError};

/// Mean over all elements of the squared difference.
pub fn mse_loss(g: &mut Graph, prediction: NodeId, target: NodeId) -> Result<NodeId> {
    if g.value(prediction).shape() != g.value(target).shape() {
        return Err(NnError::Tensor(TensorError::ShapeMismatch {
            op: "mse_loss",
            lhs: g.value(prediction).shape().to_vec(),
            rhs: g.value(target).shape().to_vec(),
        }));
    }
    let diff = g.sub(prediction, target)?;
    let sq = g.mul(diff, diff)?;
    Ok(g.mean_all(sq)?)
}

/// Mean squared error over the pixels selected by `pixel_mask` (entries 0
/// or 1, same shape as the prediction). Errors if the mask is empty.
pub fn masked_mse_loss(g: &mut Graph, prediction: NodeId, target: NodeId, pixel_mask: &Tensor) -> Result<NodeId> {
    if g.value(prediction).shape() != pixel_mask.shape() {
        return Err(NnError::Tensor(TensorError::ShapeMismatch {
            op: "masked_mse_loss",
            lhs: g.value(prediction).shape().to_vec(),
            rhs: pixel_mask.shape().to_vec(),
        }));
    }
    let selected: f64 = pixel_mask.data().iter().sum();
    if selected == 0.0 {
        return Err(NnError::EmptyMask);
    }
    let total = pixel_mask.len() as f64;
    let diff = g.sub(prediction, target)?;
    let sq = g.mul(diff, diff)?;
    let mask = g.leaf(pixel_mask.clone())?;
    let picked = g.mul(sq, mask)?;
    let mean = g.mean_all(picked)?;
    // mean over every pixel -> mean over the selected pixels.
    Ok(g.scale(mean, total / selected))
}

/// Mean over the batch of -log softmax(logits)[label], max-shifted for
/// stability.
pub fn cross_entropy_loss(g: &mut Graph, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
    let lp = g.log_softmax(logits);
    let picked = g.gather_labels(lp, labels)?;
    let mean = g.mean_all(picked)?;
    Ok(g.scale(mean, -1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{fill_normal, rng_from_seed};
    use crate::tensor::TensorError;

    fn randn(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = rng_from_seed(seed);
        let mut d = vec![0.0; shape.iter().product()];
        fill_normal(&mut rng, 1.0, &mut d);
        Tensor::new(shape, d).unwrap()
    }

    #[test]
    fn mse_of_identical_tensors_is_zero() {
        let mut g = Graph::new();
        let t = randn(&[3, 4], 1);
        let a = g.leaf(t.clone()).unwrap();
        let b = g.leaf(t).unwrap();
        let l = mse_loss(&mut g, a, b).unwrap();
        assert_eq!(g.scalar_value(l), 0.0);
    }

    #[test]
    fn mse_scalar_case() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::new(&[1], vec![0.0]).unwrap()).unwrap();
        let b = g.leaf(Tensor::new(&[1], vec![2.0]).unwrap()).unwrap();
        let l = mse_loss(&mut g, a, b).unwrap();
        assert_eq!(g.scalar_value(l), 4.0);
    }

    #[test]
    fn mse_matches_elementwise_recomputation() {
        let mut g = Graph::new();
        let pv = randn(&[2, 5], 2);
        let tv = randn(&[2, 5], 3);
        let p = g.leaf(pv.clone()).unwrap();
        let t = g.leaf(tv.clone()).unwrap();
        let l = mse_loss(&mut g, p, t).unwrap();
        let want: f64 = pv
            .data()
            .iter()
            .zip(tv.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / 10.0;
        assert!((g.scalar_value(l) - want).abs() < 1e-12);
    }

    #[test]
    fn mse_rejects_shape_mismatch() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::zeros(&[2, 3])).unwrap();
        let b = g.leaf(Tensor::zeros(&[3, 2])).unwrap();
        assert!(mse_loss(&mut g, a, b).is_err());
    }

    #[test]
    fn masked_mse_with_full_mask_equals_mse() {
        let mut g = Graph::new();
        let pv = randn(&[2, 6], 4);
        let tv = randn(&[2, 6], 5);
        let p = g.leaf(pv.clone()).unwrap();
        let t = g.leaf(tv.clone()).unwrap();
        let full = Tensor::full(&[2, 6], 1.0);
        let lm = masked_mse_loss(&mut g, p, t, &full).unwrap();
        let l = mse_loss(&mut g, p, t).unwrap();
        assert!((g.scalar_value(lm) - g.scalar_value(l)).abs() < 1e-12);
    }

    #[test]
    fn masked_mse_ignores_unmasked_garbage() {
        let mut g = Graph::new();
        let tv = randn(&[1, 4], 6);
        let mut pv = tv.clone();
        // Corrupt the two unmasked entries.
        pv.data_mut()[2] = 99.0;
        pv.data_mut()[3] = -99.0;
        let p = g.leaf(pv).unwrap();
        let t = g.leaf(tv).unwrap();
        let mask = Tensor::new(&[1, 4], vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let l = masked_mse_loss(&mut g, p, t, &mask).unwrap();
        assert_eq!(g.scalar_value(l), 0.0);
    }

    #[test]
    fn masked_mse_matches_restricted_sum_oracle() {
        let mut g = Graph::new();
        let pv = randn(&[2, 8], 7);
        let tv = randn(&[2, 8], 8);
        let mask_bits: Vec<f64> = (0..16).map(|i| if i % 2 == 0 { 1.0 } else { 0.0 }).collect();
        let mask = Tensor::new(&[2, 8], mask_bits.clone()).unwrap();
        let p = g.leaf(pv.clone()).unwrap();
        let t = g.leaf(tv.clone()).unwrap();
        let l = masked_mse_loss(&mut g, p, t, &mask).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..16 {
            if mask_bits[i] == 1.0 {
                let d = pv.data()[i] - tv.data()[i];
                num += d * d;
                den += 1.0;
            }
        }
        assert!((g.scalar_value(l) - num / den).abs() < 1e-12);
    }

    #[test]
    fn masked_mse_rejects_empty_mask() {
        let mut g = Graph::new();
        let p = g.leaf(Tensor::zeros(&[2, 2])).unwrap();
        let t = g.leaf(Tensor::zeros(&[2, 2])).unwrap();
        let mask = Tensor::zeros(&[2, 2]);
        assert!(matches!(masked_mse_loss(&mut g, p, t, &mask), Err(NnError::EmptyMask)));
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln_k() {
        let mut g = Graph::new();
        let logits = g.leaf(Tensor::zeros(&[3, 10])).unwrap();
        let l = cross_entropy_loss(&mut g, logits, &[0, 5, 9]).unwrap();
        assert!((g.scalar_value(l) - 10.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_saturates_to_zero_on_confident_correct_logit() {
        let mut g = Graph::new();
        let mut t = Tensor::zeros(&[1, 10]);
        t.data_mut()[3] = 1000.0;
        let logits = g.leaf(t).unwrap();
        let l = cross_entropy_loss(&mut g, logits, &[3]).unwrap();
        assert!(g.scalar_value(l).abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_matches_direct_softmax_log_oracle() {
        let mut g = Graph::new();
        let lv = randn(&[4, 10], 9);
        let labels = [1usize, 7, 0, 9];
        let logits = g.leaf(lv.clone()).unwrap();
        let l = cross_entropy_loss(&mut g, logits, &labels).unwrap();
        let mut want = 0.0;
        for (b, &lab) in labels.iter().enumerate() {
            let row = &lv.data()[b * 10..(b + 1) * 10];
            let denom: f64 = row.iter().map(|v| v.exp()).sum();
            want -= (row[lab].exp() / denom).ln();
        }
        want /= labels.len() as f64;
        assert!((g.scalar_value(l) - want).abs() < 1e-10);
    }

    #[test]
    fn cross_entropy_rejects_label_out_of_range() {
        let mut g = Graph::new();
        let logits = g.leaf(Tensor::zeros(&[1, 10])).unwrap();
        let err = cross_entropy_loss(&mut g, logits, &[10]).unwrap_err();
        assert!(matches!(err, NnError::Tensor(TensorError::IndexOutOfRange { .. })));
    }

    #[test]
    fn cross_entropy_is_shift_invariant() {
        let mut g = Graph::new();
        let lv = randn(&[3, 10], 10);
        let labels = [2usize, 4, 8];
        let logits = g.leaf(lv.clone()).unwrap();
        let l1 = cross_entropy_loss(&mut g, logits, &labels).unwrap();
        let mut shifted = lv.clone();
        for v in shifted.data_mut() {
            *v += 123.456;
        }
        let logits2 = g.leaf(shifted).unwrap();
        let l2 = cross_entropy_loss(&mut g, logits2, &labels).unwrap();
        assert!((g.scalar_value(l1) - g.scalar_value(l2)).abs() < 1e-10);
    }

    #[test]
    fn losses_are_batch_permutation_equivariant() {
        let mut g = Graph::new();
        let pv = randn(&[4, 6], 11);
        let tv = randn(&[4, 6], 12);
        let perm = [2usize, 0, 3, 1];
        let permute_rows = |t: &Tensor| {
            let mut out = Tensor::zeros(&[4, 6]);
            for (dst, &src) in perm.iter().enumerate() {
                out.data_mut()[dst * 6..(dst + 1) * 6].copy_from_slice(&t.data()[src * 6..(src + 1) * 6]);
            }
            out
        };
        let p = g.leaf(pv.clone()).unwrap();
        let t = g.leaf(tv.clone()).unwrap();
        let l = mse_loss(&mut g, p, t).unwrap();
        let pp = g.leaf(permute_rows(&pv)).unwrap();
        let tp = g.leaf(permute_rows(&tv)).unwrap();
        let lp = mse_loss(&mut g, pp, tp).unwrap();
        assert!((g.scalar_value(l) - g.scalar_value(lp)).abs() < 1e-12);

        let lv = randn(&[4, 10], 13);
        let labels = [1usize, 3, 5, 7];
        let logits = g.leaf(lv.clone()).unwrap();
        let ce = cross_entropy_loss(&mut g, logits, &labels).unwrap();
        let mut lv_p = Tensor::zeros(&[4, 10]);
        let mut labels_p = [0usize; 4];
        for (dst, &src) in perm.iter().enumerate() {
            lv_p.data_mut()[dst * 10..(dst + 1) * 10].copy_from_slice(&lv.data()[src * 10..(src + 1) * 10]);
            labels_p[dst] = labels[src];
        }
        let logits_p = g.leaf(lv_p).unwrap();
        let ce_p = cross_entropy_loss(&mut g, logits_p, &labels_p).unwrap();
        assert!((g.scalar_value(ce) - g.scalar_value(ce_p)).abs() < 1e-12);
    }
}
