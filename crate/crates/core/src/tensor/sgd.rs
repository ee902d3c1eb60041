use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// SGD with momentum and weight decay.
///
/// Update rule per parameter: `v = momentum * v + grad + weight_decay * p`
/// then `p = p - learning_rate * v`. Velocity buffers are keyed by a
/// caller-assigned slot index that must stay stable across steps.
#[derive(Debug, Clone)]
pub struct SgdState<T> {
    pub learning_rate: T,
    pub momentum: T,
    pub weight_decay: T,
    velocities: Vec<Vec<T>>,
}

impl<T: Scalar> SgdState<T> {
    pub fn new(learning_rate: T, momentum: T, weight_decay: T) -> Self {
        SgdState {
            learning_rate,
            momentum,
            weight_decay,
            velocities: Vec::new(),
        }
    }

    pub fn set_learning_rate(&mut self, learning_rate: T) {
        self.learning_rate = learning_rate;
    }

    pub fn step(&mut self, slot: usize, param: &mut [T], grad: &[T]) -> Result<()> {
        if param.len() != grad.len() {
            return Err(Error::domain(format!(
                "sgd_step: parameter length {} vs gradient length {}",
                param.len(),
                grad.len()
            )));
        }
        while self.velocities.len() <= slot {
            self.velocities.push(Vec::new());
        }
        let velocity = &mut self.velocities[slot];
        if velocity.is_empty() {
            velocity.resize(param.len(), T::zero());
        } else if velocity.len() != param.len() {
            return Err(Error::domain(format!(
                "sgd_step: slot {slot} velocity length {} vs parameter length {}",
                velocity.len(),
                param.len()
            )));
        }
        for ((p, &g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
            *v = self.momentum * *v + g + self.weight_decay * *p;
            *p = *p - self.learning_rate * *v;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_step_descends_by_grad() {
        let mut sgd = SgdState::new(1.0f64, 0.0, 0.0);
        let mut p = [5.0];
        sgd.step(0, &mut p, &[2.0]).unwrap();
        assert_eq!(p, [3.0]);
    }

    #[test]
    fn momentum_unrolls_by_hand() {
        // lr 1, momentum 0.9, constant grad g: step one drops g, step two
        // drops 1.9 g, total 2.9 g.
        let g = 0.4;
        let mut sgd = SgdState::new(1.0f64, 0.9, 0.0);
        let mut p = [1.0];
        sgd.step(0, &mut p, &[g]).unwrap();
        assert!((p[0] - (1.0 - g)).abs() < 1e-12);
        sgd.step(0, &mut p, &[g]).unwrap();
        assert!((p[0] - (1.0 - g - 1.9 * g)).abs() < 1e-12);
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f(p) = p^2, grad 2p, lr 0.1: contraction factor 0.8 per step.
        let mut sgd = SgdState::new(0.1f64, 0.0, 0.0);
        let mut p = [1.0];
        for _ in 0..100 {
            let g = 2.0 * p[0];
            sgd.step(0, &mut p, &[g]).unwrap();
        }
        assert!(p[0].abs() < 1e-8, "p = {}", p[0]);
        assert!((p[0] - 0.8f64.powi(100)).abs() < 1e-12);
    }

    #[test]
    fn weight_decay_pulls_towards_zero() {
        let mut sgd = SgdState::new(0.5f64, 0.0, 0.1);
        let mut p = [2.0];
        sgd.step(0, &mut p, &[0.0]).unwrap();
        assert!((p[0] - (2.0 - 0.5 * 0.2)).abs() < 1e-12);
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let mut sgd = SgdState::new(0.1f32, 0.9, 0.0);
        let mut p = [0.0f32; 3];
        assert!(sgd.step(0, &mut p, &[0.0; 2]).is_err());
        sgd.step(0, &mut p, &[0.0; 3]).unwrap();
        let mut q = [0.0f32; 4];
        assert!(sgd.step(0, &mut q, &[0.0; 4]).is_err()); // slot shape changed
    }
}
