use serde::{Deserialize, Serialize};

use super::network::NetworkState;
use super::real::Real;
use super::spec::Mode;
use super::NnError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub seed: u64,
    pub mode: Mode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 30,
            seed: 0,
            mode: Mode::Classify,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::InvalidConfig(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("beta1 and beta2 must lie in (0, 1)");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        Ok(())
    }
}

/// One Adam update with bias correction; increments the step counter.
pub fn adam_step<T: Real>(
    state: &mut NetworkState<T>,
    grads: &[T],
    cfg: &TrainConfig,
) -> Result<(), NnError> {
    if grads.len() != state.params.len() {
        return Err(NnError::InvalidConfig(format!(
            "{} gradients for {} parameters",
            grads.len(),
            state.params.len()
        )));
    }
    state.step += 1;
    let t = state.step as f64;
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let (c1, c2) = (T::one() - b1, T::one() - b2);
    let bc1 = T::of(1.0 - cfg.beta1.powf(t));
    let bc2 = T::of(1.0 - cfg.beta2.powf(t));
    let lr = T::of(cfg.learning_rate);
    let eps = T::of(cfg.epsilon);
    for k in 0..grads.len() {
        let g = grads[k];
        let m = b1 * state.m[k] + c1 * g;
        let v = b2 * state.v[k] + c2 * g * g;
        state.m[k] = m;
        state.v[k] = v;
        state.params[k] -= lr * (m / bc1) / ((v / bc2).sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(params: Vec<f64>) -> NetworkState<f64> {
        let n = params.len();
        NetworkState { params, m: vec![0.0; n], v: vec![0.0; n], step: 0, running: vec![], entries: vec![] }
    }

    #[test]
    fn constant_gradient_steps_approach_learning_rate() {
        let cfg = TrainConfig { learning_rate: 0.01, ..Default::default() };
        let mut s = state(vec![0.0, 0.0]);
        for _ in 0..5000 {
            let before = s.params.clone();
            adam_step(&mut s, &[0.3, -2.0], &cfg).unwrap();
            let d0 = (s.params[0] - before[0]).abs();
            let d1 = (s.params[1] - before[1]).abs();
            assert!((d0 - 0.01).abs() <= 0.01 * 0.01 && (d1 - 0.01).abs() <= 0.01 * 0.01);
        }
        assert_eq!(s.step, 5000);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = state(vec![1.5, -0.25]);
        adam_step(&mut s, &[0.0, 0.0], &TrainConfig::default()).unwrap();
        assert_eq!(s.params, [1.5, -0.25]);
    }

    #[test]
    fn first_step_is_scale_invariant() {
        let mut s = state(vec![0.0, 0.0]);
        adam_step(&mut s, &[0.002, 0.2], &TrainConfig::default()).unwrap();
        assert!((s.params[0].abs() - s.params[1].abs()).abs() < 1e-8);
        assert!((s.params[1].abs() - 1e-3).abs() < 1e-8);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { beta1: 1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { beta2: 0.0, ..Default::default() }.validate().is_err());
        let mut s = state(vec![0.0]);
        assert!(adam_step(&mut s, &[0.0, 1.0], &TrainConfig::default()).is_err());
    }
}
