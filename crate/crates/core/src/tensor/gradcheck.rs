//! Central finite-difference verification of the adjoint rules.

use super::{Graph, NodeId, Result, Tensor};

/// Outcome of checking one leaf.
#[derive(Debug, Clone)]
pub struct LeafReport {
    pub leaf: NodeId,
    /// Elements actually compared (may be a deterministic subsample).
    pub checked: usize,
    pub max_rel_err: f64,
}

/// Report of a full gradient check. Failures are reported, not thrown.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub step: f64,
    pub leaves: Vec<LeafReport>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.leaves.iter().all(|l| l.max_rel_err < self.tolerance)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.leaves.iter().map(|l| l.max_rel_err).fold(0.0, f64::max)
    }
}

/// Relative difference with a small floor so near-zero pairs compare
/// cleanly.
pub(crate) fn rel_diff(adjoint: f64, fd: f64) -> f64 {
    let denom = adjoint.abs().max(fd.abs()).max(1e-6);
    (adjoint - fd).abs() / denom
}

/// Compares the adjoint gradient at each leaf against central finite
/// differences of the replayed forward pass.
///
/// `max_per_leaf` caps how many elements of a large leaf are probed; the
/// probe set is an evenly spaced deterministic subsample.
pub fn grad_check(
    graph: &mut Graph,
    root: NodeId,
    leaves: &[NodeId],
    step: f64,
    tolerance: f64,
    max_per_leaf: Option<usize>,
) -> Result<GradCheckReport> {
    assert!(step > 0.0 && step <= 1e-2, "step {step} outside (0, 1e-2]");
    graph.replay();
    graph.backward(root)?;
    let adjoints: Vec<Tensor> = leaves
        .iter()
        .map(|l| graph.grad(*l).unwrap_or_else(|| Tensor::zeros(graph.value(*l).shape())))
        .collect();

    let mut reports = Vec::with_capacity(leaves.len());
    for (leaf, adjoint) in leaves.iter().zip(&adjoints) {
        let len = graph.value(*leaf).len();
        let probes: Vec<usize> = match max_per_leaf {
            Some(m) if len > m => {
                let stride = len as f64 / m as f64;
                (0..m).map(|i| (i as f64 * stride) as usize).collect()
            }
            _ => (0..len).collect(),
        };
        let mut max_err = 0.0_f64;
        for &i in &probes {
            let original = graph.leaf_data_mut(*leaf)[i];
            graph.leaf_data_mut(*leaf)[i] = original + step;
            let plus = graph.forward(root).item();
            graph.leaf_data_mut(*leaf)[i] = original - step;
            let minus = graph.forward(root).item();
            graph.leaf_data_mut(*leaf)[i] = original;
            let fd = (plus - minus) / (2.0 * step);
            max_err = max_err.max(rel_diff(adjoint.data()[i], fd));
        }
        reports.push(LeafReport {
            leaf: *leaf,
            checked: probes.len(),
            max_rel_err: max_err,
        });
    }
    // Leave the graph's values consistent with the unperturbed leaves.
    graph.replay();
    Ok(GradCheckReport {
        tolerance,
        step,
        leaves: reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{fill_normal, rng_from_seed};

    #[test]
    fn linear_layer_passes() {
        let mut rng = rng_from_seed(1);
        let mut g = Graph::new();
        let mut xd = vec![0.0; 4 * 6];
        let mut wd = vec![0.0; 6 * 3];
        fill_normal(&mut rng, 1.0, &mut xd);
        fill_normal(&mut rng, 0.5, &mut wd);
        let x = g.param(&Tensor::new(&[4, 6], xd).unwrap()).unwrap();
        let w = g.param(&Tensor::new(&[6, 3], wd).unwrap()).unwrap();
        let y = g.matmul(x, w).unwrap();
        let sq = g.mul(y, y).unwrap();
        let loss = g.mean_all(sq).unwrap();
        let report = grad_check(&mut g, loss, &[x, w], 1e-4, 1e-4, None).unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_err());
    }

    #[test]
    fn tanh_chain_passes() {
        let mut rng = rng_from_seed(2);
        let mut g = Graph::new();
        let mut xd = vec![0.0; 10];
        fill_normal(&mut rng, 1.0, &mut xd);
        let x = g.param(&Tensor::new(&[1, 10], xd).unwrap()).unwrap();
        let t1 = g.tanh(x);
        let t2 = g.tanh(t1);
        let loss = g.mean_all(t2).unwrap();
        let report = grad_check(&mut g, loss, &[x], 1e-4, 1e-4, None).unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_err());
    }

    #[test]
    fn corrupted_adjoint_fails_the_comparison() {
        // f(x) = mean(x^2): true gradient is 2x/n; doubling it must trip
        // the tolerance.
        let x = [0.3, -0.7, 1.1];
        let n = x.len() as f64;
        for v in x {
            let true_grad = 2.0 * v / n;
            let corrupted = 2.0 * true_grad;
            assert!(rel_diff(corrupted, true_grad) > 1e-4);
        }
    }

    #[test]
    fn subsampled_probe_set_is_deterministic() {
        let mut g = Graph::new();
        let x = g.param(&Tensor::new(&[100], (0..100).map(|i| i as f64 / 100.0).collect()).unwrap()).unwrap();
        let sq = g.mul(x, x).unwrap();
        let loss = g.mean_all(sq).unwrap();
        let r1 = grad_check(&mut g, loss, &[x], 1e-4, 1e-4, Some(10)).unwrap();
        let r2 = grad_check(&mut g, loss, &[x], 1e-4, 1e-4, Some(10)).unwrap();
        assert_eq!(r1.leaves[0].checked, 10);
        assert_eq!(r1.leaves[0].max_rel_err.to_bits(), r2.leaves[0].max_rel_err.to_bits());
        assert!(r1.passed());
    }
}
