//! RMSProp: v ← ρv + (1 − ρ)g², θ ← θ − lr·g/√(v + ε).

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct RmsPropConfig {
    pub learning_rate: f64,
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        RmsPropConfig {
            learning_rate: 1e-3,
            rho: 0.9,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RmsProp<E: Scalar> {
    lr: E,
    rho: E,
    eps: E,
    // Per-block squared-gradient accumulators (weight, bias), zero-initialized.
    state: Vec<(Vec<E>, Vec<E>)>,
}

impl<E: Scalar> RmsProp<E> {
    pub fn new(config: RmsPropConfig) -> Self {
        RmsProp {
            lr: E::of_f64(config.learning_rate),
            rho: E::of_f64(config.rho),
            eps: E::of_f64(config.epsilon),
            state: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore<E>, grads: &ParamStore<E>) -> Result<()> {
        if self.state.is_empty() {
            self.state = params
                .blocks()
                .iter()
                .map(|b| {
                    (
                        vec![E::zero(); b.weight.numel()],
                        vec![E::zero(); b.bias.numel()],
                    )
                })
                .collect();
        }
        if params.blocks().len() != grads.blocks().len() || params.blocks().len() != self.state.len()
        {
            return Err(Error::InvalidArgument(
                "optimizer state, parameters and gradients disagree on block count".into(),
            ));
        }
        for ((block, gblock), (vw, vb)) in params
            .blocks_mut()
            .iter_mut()
            .zip(grads.blocks().iter())
            .zip(self.state.iter_mut())
        {
            update(block.weight.data_mut(), gblock.weight.data(), vw, self.lr, self.rho, self.eps);
            update(block.bias.data_mut(), gblock.bias.data(), vb, self.lr, self.rho, self.eps);
        }
        Ok(())
    }
}

fn update<E: Scalar>(params: &mut [E], grads: &[E], v: &mut [E], lr: E, rho: E, eps: E) {
    let one = E::one();
    for ((p, &g), vi) in params.iter_mut().zip(grads).zip(v.iter_mut()) {
        *vi = rho * *vi + (one - rho) * g * g;
        *p = *p - lr * g / (*vi + eps).sqrt();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(lr: f64, rho: f64, eps: f64, p0: f64, gs: &[f64]) -> Vec<f64> {
        let mut p = vec![p0];
        let mut v = vec![0.0];
        let mut history = Vec::new();
        for &g in gs {
            update(&mut p, &[g], &mut v, lr, rho, eps);
            history.push(p[0]);
        }
        history
    }

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        let h = single(1e-3, 0.9, 1e-8, 0.7, &[0.0, 0.0]);
        assert_eq!(h, vec![0.7, 0.7]);
    }

    #[test]
    fn first_step_matches_hand_arithmetic() {
        // v = 0.1, Δ = −1e-3/√(0.1 + 1e-8) ≈ −3.16227e-3
        let h = single(1e-3, 0.9, 1e-8, 0.0, &[1.0]);
        let expected = -1e-3 / (0.1f64 + 1e-8).sqrt();
        assert!((h[0] - expected).abs() < 1e-12, "{} vs {expected}", h[0]);
        assert!((h[0] + 3.1623e-3).abs() < 1e-6);
    }

    #[test]
    fn repeated_identical_steps_shrink() {
        // v grows with each identical gradient, so |Δ| shrinks.
        let h = single(1e-3, 0.9, 1e-8, 0.0, &[1.0, 1.0]);
        let d1 = h[0].abs();
        let d2 = (h[1] - h[0]).abs();
        assert!(d2 < d1, "second step {d2} should be smaller than first {d1}");
    }
}
