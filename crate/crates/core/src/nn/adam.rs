//! Adam with bias correction. Each model module (encoder, decoder,
//! classifier) owns an independent state.

use super::{NnError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct AdamState {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step_count: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(step_size: f64) -> Self {
        Self {
            step_size,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Starts a new optimizer step; all `update` calls until the next
    /// `begin_step` share one bias-correction exponent.
    pub fn begin_step(&mut self) {
        self.step_count += 1;
    }

    /// Updates one parameter slot in place. Slots must be presented in a
    /// fixed order across steps.
    pub fn update(&mut self, slot: usize, name: &str, param: &mut Tensor, grad: &[f64]) -> Result<()> {
        debug_assert!(self.step_count > 0, "begin_step before update");
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(NnError::NonFiniteGradient { param: name.to_string() });
        }
        while self.first_moment.len() <= slot {
            self.first_moment.push(Vec::new());
            self.second_moment.push(Vec::new());
        }
        if self.first_moment[slot].len() != param.len() {
            self.first_moment[slot] = vec![0.0; param.len()];
            self.second_moment[slot] = vec![0.0; param.len()];
        }
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let m = &mut self.first_moment[slot];
        let v = &mut self.second_moment[slot];
        for ((p, g), (mi, vi)) in param
            .data_mut()
            .iter_mut()
            .zip(grad)
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
            *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *p -= self.step_size * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_step(step_size: f64, grad: f64, start: f64) -> f64 {
        let mut adam = AdamState::new(step_size);
        let mut p = Tensor::new(&[1], vec![start]).unwrap();
        adam.begin_step();
        adam.update(0, "w", &mut p, &[grad]).unwrap();
        p.data()[0]
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        assert_eq!(single_step(0.1, 0.0, 1.5), 1.5);
    }

    #[test]
    fn first_step_moves_by_step_size_times_sign() {
        // After bias correction the first update is step_size * sign(g)
        // up to the epsilon in the denominator.
        for g in [3.0, -0.25, 1e4] {
            let end = single_step(0.01, g, 0.0);
            assert!((end + 0.01 * g.signum()).abs() < 1e-6, "g={g} end={end}");
        }
    }

    #[test]
    fn step_size_zero_is_identity() {
        let mut adam = AdamState::new(0.0);
        let mut p = Tensor::new(&[3], vec![1.0, -2.0, 3.0]).unwrap();
        for _ in 0..5 {
            adam.begin_step();
            adam.update(0, "w", &mut p, &[0.3, -0.7, 0.9]).unwrap();
        }
        assert_eq!(p.data(), &[1.0, -2.0, 3.0]);
    }

    #[test]
    fn hundred_steps_descend_quadratic_bowl() {
        // f(w) = w^2, grad 2w, from w = 1 with step 0.1. The oracle is the
        // scalar recurrence itself, run here directly.
        let mut adam = AdamState::new(0.1);
        let mut p = Tensor::new(&[1], vec![1.0]).unwrap();
        for _ in 0..100 {
            let g = 2.0 * p.data()[0];
            adam.begin_step();
            adam.update(0, "w", &mut p, &[g]).unwrap();
        }
        assert!(p.data()[0].abs() < 0.05, "ended at {}", p.data()[0]);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut adam = AdamState::new(0.1);
        let mut p = Tensor::new(&[1], vec![1.0]).unwrap();
        adam.begin_step();
        let err = adam.update(0, "enc.w", &mut p, &[f64::NAN]).unwrap_err();
        assert!(matches!(err, NnError::NonFiniteGradient { .. }));
    }
}
