//! Adam with an L2 weight-decay term folded into the gradient.

use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::error::{Result, SigilError};
use crate::matrix::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 5e-4 }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros = || params.iter().map(|p| Matrix::zeros(p.value.rows(), p.value.cols())).collect();
        Self { config, step: 0, first: zeros(), second: zeros() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update. On a non-finite gradient nothing is modified.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Matrix]) -> Result<()> {
        assert_eq!(grads.len(), params.len(), "one gradient per parameter");
        for (p, g) in params.iter().zip(grads) {
            assert_eq!(p.value.shape(), g.shape(), "gradient shape for `{}`", p.name);
            if !g.all_finite() {
                return Err(SigilError::NonFiniteGradient(p.name.clone()));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps, weight_decay } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);

        for ((p, g), (m, v)) in
            params.iter_mut().zip(grads).zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            let wd = if p.decay { weight_decay } else { 0.0 };
            let values = p.value.as_mut_slice();
            for (((x, &gx), mx), vx) in
                values.iter_mut().zip(g.as_slice()).zip(m.as_mut_slice()).zip(v.as_mut_slice())
            {
                let grad = gx + wd * *x;
                *mx = beta1 * *mx + (1.0 - beta1) * grad;
                *vx = beta2 * *vx + (1.0 - beta2) * grad * grad;
                let m_hat = *mx / bc1;
                let v_hat = *vx / bc2;
                *x -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(value: f64, decay: bool) -> ParamStore {
        let mut s = ParamStore::new();
        s.push("w", Matrix::scalar(value), decay);
        s
    }

    #[test]
    fn zero_gradient_without_decay_is_a_fixed_point() {
        let mut params = store(0.3, true);
        let mut adam = AdamState::new(AdamConfig { weight_decay: 0.0, ..Default::default() }, &params);
        for _ in 0..5 {
            adam.step(&mut params, &[Matrix::scalar(0.0)]).unwrap();
        }
        assert_eq!(params.get(super::super::ParamId(0)).value.item(), 0.3);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = 1, v_hat = 1 after bias correction, so the step is lr / (1 + eps).
        let mut params = store(0.0, true);
        let mut adam = AdamState::new(AdamConfig { weight_decay: 0.0, ..Default::default() }, &params);
        adam.step(&mut params, &[Matrix::scalar(1.0)]).unwrap();
        let p = params.get(super::super::ParamId(0)).value.item();
        assert!((p + 0.001 / (1.0 + 1e-8)).abs() < 1e-15, "{p}");
    }

    #[test]
    fn weight_decay_shrinks_weights_but_not_biases() {
        let mut params = store(1.0, true);
        params.push("b", Matrix::scalar(1.0), false);
        let mut adam = AdamState::new(AdamConfig::default(), &params);
        adam.step(&mut params, &[Matrix::scalar(0.0), Matrix::scalar(0.0)]).unwrap();
        assert!(params.as_slice()[0].value.item() < 1.0);
        assert_eq!(params.as_slice()[1].value.item(), 1.0);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter_and_leaves_state_untouched() {
        let mut params = store(1.0, true);
        let mut adam = AdamState::new(AdamConfig::default(), &params);
        let err = adam.step(&mut params, &[Matrix::scalar(f64::NAN)]).unwrap_err();
        assert!(matches!(err, SigilError::NonFiniteGradient(ref n) if n == "w"));
        assert_eq!(adam.step_count(), 0);
        assert_eq!(params.as_slice()[0].value.item(), 1.0);
    }
}
