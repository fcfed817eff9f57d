use serde::{Deserialize, Serialize};

use super::param::ParamSet;
use crate::error::{Result, TransgError};

/// Bias-corrected Adam. Moment buffers live on each [`super::param::Param`];
/// this struct holds the shared hyperparameters and step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub t: u64,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            t: 0,
        }
    }

    /// One update step over every trainable parameter. Gradients must be
    /// populated; they are left in place for the caller to zero explicitly.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for p in params.iter_mut() {
            if !p.trainable {
                continue;
            }
            let grad = p.grad.as_ref().ok_or_else(|| {
                TransgError::Contract(format!("adam step: missing gradient for {}", p.name))
            })?;
            for i in 0..grad.data.len() {
                let g = grad.data[i];
                p.adam_m.data[i] = self.beta1 * p.adam_m.data[i] + (1.0 - self.beta1) * g;
                p.adam_v.data[i] = self.beta2 * p.adam_v.data[i] + (1.0 - self.beta2) * g * g;
                let m_hat = p.adam_m.data[i] / bc1;
                let v_hat = p.adam_v.data[i] / bc2;
                p.value.data[i] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tensor::Tensor;

    #[test]
    fn first_step_is_minus_lr() {
        // Closed form: m_hat = g, v_hat = g^2, update = -lr * g/(|g| + eps).
        let lr = 3.5e-4;
        let mut ps = ParamSet::new();
        ps.add("theta", Tensor::from_vec(vec![0.0]), true);
        ps.accumulate_grad("theta", &Tensor::from_vec(vec![1.0]))
            .unwrap();
        let mut adam = AdamState::new(lr);
        adam.step(&mut ps).unwrap();
        let theta = ps.get("theta").unwrap().value.data[0];
        let expected = -lr * 1.0 / (1.0 + adam.epsilon);
        assert!((theta - expected).abs() < 1e-9);
    }

    #[test]
    fn zero_grad_leaves_param_unchanged() {
        let mut ps = ParamSet::new();
        ps.add("theta", Tensor::from_vec(vec![1.5]), true);
        let mut adam = AdamState::new(0.01);
        for _ in 0..5 {
            ps.accumulate_grad("theta", &Tensor::from_vec(vec![0.0]))
                .unwrap();
            adam.step(&mut ps).unwrap();
            ps.zero_grads();
        }
        assert_eq!(ps.get("theta").unwrap().value.data[0], 1.5);
    }

    #[test]
    fn identical_grads_identical_updates() {
        let mut ps = ParamSet::new();
        ps.add("a", Tensor::from_vec(vec![0.3]), true);
        ps.add("b", Tensor::from_vec(vec![0.3]), true);
        let g = Tensor::from_vec(vec![0.7]);
        let mut adam = AdamState::new(0.01);
        for _ in 0..3 {
            ps.accumulate_grad("a", &g).unwrap();
            ps.accumulate_grad("b", &g).unwrap();
            adam.step(&mut ps).unwrap();
            ps.zero_grads();
        }
        assert_eq!(
            ps.get("a").unwrap().value.data[0],
            ps.get("b").unwrap().value.data[0]
        );
    }

    #[test]
    fn missing_grad_names_parameter() {
        let mut ps = ParamSet::new();
        ps.add("theta", Tensor::from_vec(vec![0.0]), true);
        let mut adam = AdamState::new(0.01);
        let err = adam.step(&mut ps).unwrap_err();
        assert!(err.to_string().contains("theta"));
    }
}
