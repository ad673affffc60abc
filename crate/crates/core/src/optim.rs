//! Adam with bias correction and optional weight decay.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::tensor::Tensor;

/// How weight decay enters the update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightDecay {
    /// `λ·θ` is added to the gradient before the moment updates.
    #[default]
    L2,
    /// `lr·λ·θ` is subtracted from the parameter after the Adam step.
    Decoupled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub decay_mode: WeightDecay,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            weight_decay: 5e-5,
            decay_mode: WeightDecay::L2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            bail!(Config, "learning rate must be finite and non-negative, got {}", self.learning_rate);
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            bail!(Config, "weight decay must be finite and non-negative, got {}", self.weight_decay);
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                bail!(Config, "{name} must lie in (0, 1), got {b}");
            }
        }
        if !(self.epsilon > 0.0) {
            bail!(Config, "epsilon must be positive, got {}", self.epsilon);
        }
        Ok(())
    }
}

/// First and second moment estimates for a fixed list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step_count: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zeroed moments sized for `params`.
    pub fn new<'t>(config: AdamConfig, params: impl IntoIterator<Item = &'t Tensor>) -> Result<Self> {
        config.validate()?;
        let sizes: Vec<usize> = params.into_iter().map(Tensor::len).collect();
        Ok(AdamState {
            config,
            step_count: 0,
            first_moment: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.second_moment
    }

    /// One update of every parameter from its accumulated `grad`. Tensors
    /// without a gradient are treated as having a zero gradient. Gradients
    /// are left in place.
    pub fn step<'t>(&mut self, params: impl IntoIterator<Item = &'t mut Tensor>) -> Result<()> {
        let mut params: Vec<&mut Tensor> = params.into_iter().collect();
        if params.len() != self.first_moment.len() {
            bail!(
                State,
                "optimizer tracks {} tensors but {} were supplied",
                self.first_moment.len(),
                params.len()
            );
        }
        for (i, p) in params.iter().enumerate() {
            if p.len() != self.first_moment[i].len() {
                bail!(
                    State,
                    "tensor {i} has {} elements, moments hold {}",
                    p.len(),
                    self.first_moment[i].len()
                );
            }
        }
        self.step_count += 1;
        let c = self.config;
        let t = self.step_count as i32;
        let correction1 = 1.0 - libm::pow(c.beta1, t as f64);
        let correction2 = 1.0 - libm::pow(c.beta2, t as f64);
        let l2 = if c.decay_mode == WeightDecay::L2 { c.weight_decay } else { 0.0 };
        let decoupled = if c.decay_mode == WeightDecay::Decoupled { c.weight_decay } else { 0.0 };

        for (i, p) in params.iter_mut().enumerate() {
            let (data, grad) = p.data_and_grad_mut();
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            for (j, theta) in data.iter_mut().enumerate() {
                let g = grad.map_or(0.0, |g| g[j]) + l2 * *theta;
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
                let m_hat = m[j] / correction1;
                let v_hat = v[j] / correction2;
                *theta -= c.learning_rate * (m_hat / (libm::sqrt(v_hat) + c.epsilon) + decoupled * *theta);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_grad(data: &[f64], grad: &[f64]) -> Tensor {
        let mut t = Tensor::from_vec(data.to_vec()).with_grad();
        t.accumulate_grad(grad, 1.0).unwrap();
        t
    }

    #[test]
    fn zero_gradient_without_decay_leaves_parameters() {
        let mut p = with_grad(&[0.5, -1.25], &[0.0, 0.0]);
        let before = p.clone();
        let cfg = AdamConfig { weight_decay: 0.0, ..AdamConfig::default() };
        let mut adam = AdamState::new(cfg, [&p]).unwrap();
        for _ in 0..5 {
            adam.step([&mut p]).unwrap();
        }
        assert_eq!(p.data(), before.data());
        assert_eq!(adam.step_count(), 5);
    }

    #[test]
    fn single_step_matches_hand_computation() {
        // g = 0.2, β1 = 0.9, β2 = 0.999:
        // m = 0.02, v = 4e-5, m̂ = 0.2, v̂ = 0.04, step = lr·0.2/(0.2 + ε)
        let lr = 1e-3;
        let eps = 1e-8;
        let mut p = with_grad(&[1.0], &[0.2]);
        let cfg = AdamConfig { learning_rate: lr, weight_decay: 0.0, epsilon: eps, ..AdamConfig::default() };
        let mut adam = AdamState::new(cfg, [&p]).unwrap();
        adam.step([&mut p]).unwrap();
        let want = 1.0 - lr * 0.2 / (0.2 + eps);
        assert!((p.data()[0] - want).abs() < 1e-15);
        assert!((adam.first_moment()[0][0] - 0.02).abs() < 1e-15);
        assert!((adam.second_moment()[0][0] - 4e-5).abs() < 1e-18);
    }

    #[test]
    fn l2_decay_enters_the_gradient() {
        // θ = 2, g = 0, λ = 0.1 → effective gradient 0.2, so the first step is −lr·0.2/(0.2+ε)
        let mut p = with_grad(&[2.0], &[0.0]);
        let cfg = AdamConfig { learning_rate: 0.01, weight_decay: 0.1, ..AdamConfig::default() };
        let mut adam = AdamState::new(cfg, [&p]).unwrap();
        adam.step([&mut p]).unwrap();
        let want = 2.0 - 0.01 * 0.2 / (0.2 + 1e-8);
        assert!((p.data()[0] - want).abs() < 1e-15);
    }

    #[test]
    fn decoupled_decay_shrinks_without_touching_moments() {
        let mut p = with_grad(&[2.0], &[0.0]);
        let cfg = AdamConfig {
            learning_rate: 0.01,
            weight_decay: 0.1,
            decay_mode: WeightDecay::Decoupled,
            ..AdamConfig::default()
        };
        let mut adam = AdamState::new(cfg, [&p]).unwrap();
        adam.step([&mut p]).unwrap();
        assert!((p.data()[0] - (2.0 - 0.01 * 0.1 * 2.0)).abs() < 1e-15);
        assert_eq!(adam.first_moment()[0][0], 0.0);
    }

    #[test]
    fn identical_tensors_stay_identical() {
        let mut a = with_grad(&[0.1, 0.2, -0.3], &[0.5, -0.5, 0.25]);
        let mut b = a.clone();
        let mut adam = AdamState::new(AdamConfig::default(), [&a, &b]).unwrap();
        for _ in 0..25 {
            adam.step([&mut a, &mut b]).unwrap();
        }
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut p = with_grad(&[0.7, -0.1], &[3.0, -2.0]);
        let before = p.data().to_vec();
        let cfg = AdamConfig { learning_rate: 0.0, ..AdamConfig::default() };
        let mut adam = AdamState::new(cfg, [&p]).unwrap();
        adam.step([&mut p]).unwrap();
        assert_eq!(p.data(), &before[..]);
    }

    #[test]
    fn mismatched_parameters_are_a_state_error() {
        let mut p = with_grad(&[0.0, 0.0], &[1.0, 1.0]);
        let mut q = with_grad(&[0.0], &[1.0]);
        let mut adam = AdamState::new(AdamConfig::default(), [&p]).unwrap();
        assert!(matches!(adam.step([&mut q]), Err(crate::Error::State(_))));
        assert!(matches!(adam.step([&mut p, &mut q]), Err(crate::Error::State(_))));
        assert_eq!(adam.step_count(), 0);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        let bad = AdamConfig { beta1: 1.0, ..AdamConfig::default() };
        assert!(AdamState::new(bad, core::iter::empty()).is_err());
        let bad = AdamConfig { learning_rate: -1.0, ..AdamConfig::default() };
        assert!(AdamState::new(bad, core::iter::empty()).is_err());
    }
}
