use super::Tensor;
use crate::error::{FreaError, Result};

/// Moment buffers and hyperparameters of an ADAM optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

/// Bias-corrected ADAM.
#[derive(Debug, Clone)]
pub struct Adam {
    state: AdamState,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Adam {
            state: AdamState {
                lr,
                beta1,
                beta2,
                epsilon,
                step: 0,
                m: Vec::new(),
                v: Vec::new(),
            },
        }
    }

    pub fn state(&self) -> &AdamState {
        &self.state
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.state.lr = lr;
    }

    /// One update of every parameter from its gradient. Moment buffers are
    /// allocated lazily on the first call and pinned to those shapes.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(FreaError::shape(
                "adam_step",
                format!("{} params vs {} grads", params.len(), grads.len()),
            ));
        }
        for (p, g) in params.iter().zip(grads) {
            p.expect_same_shape(g, "adam_step")?;
        }
        let s = &mut self.state;
        if s.m.is_empty() {
            s.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            s.v = s.m.clone();
        } else if s.m.len() != params.len() || s.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len()) {
            return Err(FreaError::shape(
                "adam_step",
                "parameter set differs from the one the moments were built for",
            ));
        }
        s.step += 1;
        let t = s.step as i32;
        let bc1 = 1.0 - s.beta1.powi(t);
        let bc2 = 1.0 - s.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut s.m[i], &mut s.v[i]);
            for (j, (pv, &gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = s.beta1 * m[j] + (1.0 - s.beta1) * gv;
                v[j] = s.beta2 * v[j] + (1.0 - s.beta2) * gv * gv;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *pv -= s.lr * m_hat / (v_hat.sqrt() + s.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut adam = Adam::new(2e-4, 0.5, 0.999, 1e-8);
        let mut params = vec![Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap()];
        let before = params.clone();
        adam.step(&mut params, &[Tensor::zeros(&[3])]).unwrap();
        assert_eq!(params, before);
        assert_eq!(adam.state().step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = g and v_hat = g^2 after one step, so the update is lr * g/|g|.
        let mut adam = Adam::new(2e-4, 0.5, 0.999, 1e-12);
        let mut params = vec![Tensor::zeros(&[1])];
        adam.step(&mut params, &[Tensor::ones(&[1])]).unwrap();
        assert!((params[0].item() + 2e-4).abs() < 1e-15);
    }

    #[test]
    fn two_steps_match_hand_computed_updates() {
        let (lr, b1, b2, eps) = (1e-3, 0.9, 0.999, 1e-8);
        let g = 0.7;
        let mut adam = Adam::new(lr, b1, b2, eps);
        let mut params = vec![Tensor::scalar(1.5)];
        let grads = [Tensor::scalar(g)];
        adam.step(&mut params, &grads).unwrap();
        adam.step(&mut params, &grads).unwrap();

        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 1.5f64);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x -= lr * mh / (vh.sqrt() + eps);
        }
        assert!((params[0].item() - x).abs() < 1e-12);
        assert_eq!(adam.state().step, 2);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut adam = Adam::new(1e-3, 0.9, 0.999, 1e-8);
        let mut params = vec![Tensor::zeros(&[2])];
        assert!(adam.step(&mut params, &[Tensor::zeros(&[3])]).is_err());
        assert!(adam.step(&mut params, &[]).is_err());
    }
}
