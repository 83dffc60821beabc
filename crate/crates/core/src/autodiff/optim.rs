use crate::error::{Error, Result};

use super::Parameter;

/// Adam accumulators, one slot per parameter in the order given to
/// [`Adam::step`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

/// Adaptive-moment optimiser with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay: each step also subtracts `lr * weight_decay * w`.
    pub weight_decay: f64,
    pub state: AdamState,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            state: AdamState::default(),
        }
    }

    /// Applies one update to every trainable parameter and zeroes the
    /// gradients afterwards. Frozen parameters keep empty accumulator slots.
    pub fn step(&mut self, params: &mut [&mut Parameter]) -> Result<()> {
        if self.state.m.is_empty() && self.state.step == 0 {
            self.state.m = params
                .iter()
                .map(|p| vec![0.0; if p.trainable { p.tensor.len() } else { 0 }])
                .collect();
            self.state.v = self.state.m.clone();
        }
        if self.state.m.len() != params.len() {
            return Err(Error::Invalid(format!(
                "optimizer tracks {} parameters, got {}",
                self.state.m.len(),
                params.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            if !p.trainable {
                continue;
            }
            if p.tensor.grad().is_none() {
                return Err(Error::Invalid(format!("parameter {} has no gradient", p.name)));
            }
            if self.state.m[i].len() != p.tensor.len() || self.state.v[i].len() != p.tensor.len() {
                return Err(Error::shape(
                    "adam",
                    format!("accumulator for {} does not match its shape", p.name),
                ));
            }
        }

        self.state.step += 1;
        let t = self.state.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let grad = p.tensor.grad().expect("checked above").to_vec();
            let (m, v) = (&mut self.state.m[i], &mut self.state.v[i]);
            for (j, w) in p.tensor.data_mut().iter_mut().enumerate() {
                let g = grad[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *w -= self.lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * *w);
            }
            p.tensor.zero_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn scalar(v: f64) -> Parameter {
        Parameter::new("w", Tensor::vector(vec![v]))
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = scalar(0.3);
        p.tensor.zero_grad();
        let mut opt = Adam::new(0.1);
        opt.step(&mut [&mut p]).unwrap();
        assert_eq!(p.tensor.data(), &[0.3]);
        assert_eq!(opt.state.step, 1);
    }

    #[test]
    fn decay_alone_shrinks_by_lr_times_rate() {
        let mut p = scalar(2.0);
        p.tensor.zero_grad();
        let mut opt = Adam {
            weight_decay: 0.5,
            ..Adam::new(0.1)
        };
        opt.step(&mut [&mut p]).unwrap();
        assert_eq!(p.tensor.data(), &[2.0 - 0.1 * 0.5 * 2.0]);
    }

    #[test]
    fn first_step_hand_trace() {
        // m = 0.1, v = 0.001; bias-corrected both are 1, so the update is
        // lr * 1 / (sqrt(1) + eps).
        let mut p = scalar(0.0);
        p.tensor.grad_mut()[0] = 1.0;
        let mut opt = Adam::new(0.1);
        opt.step(&mut [&mut p]).unwrap();
        let expected = -0.1 * (1.0 / (1.0 + 1e-8));
        assert!((p.tensor.data()[0] - expected).abs() < 1e-15);
        assert_eq!(p.tensor.grad().unwrap(), &[0.0]);

        // constant gradient: every bias-corrected step has the same size
        p.tensor.grad_mut()[0] = 1.0;
        opt.step(&mut [&mut p]).unwrap();
        assert!((p.tensor.data()[0] - 2.0 * expected).abs() < 1e-12);
    }

    #[test]
    fn absent_gradient_is_an_error() {
        let mut p = scalar(1.0);
        let mut opt = Adam::new(0.1);
        assert!(opt.step(&mut [&mut p]).is_err());
    }

    #[test]
    fn frozen_parameters_are_skipped() {
        let mut p = Parameter::frozen("f", Tensor::vector(vec![1.0]));
        let mut opt = Adam::new(0.1);
        opt.step(&mut [&mut p]).unwrap();
        assert_eq!(p.tensor.data(), &[1.0]);
    }

    #[test]
    fn identical_runs_are_identical() {
        let run = || {
            let mut p = Parameter::new("w", Tensor::vector(vec![0.5, -0.25]));
            let mut opt = Adam::new(0.01);
            for k in 0..20 {
                let g: Vec<f64> = p.tensor.data().iter().map(|w| 2.0 * w + k as f64 * 1e-3).collect();
                p.tensor.grad_mut().copy_from_slice(&g);
                opt.step(&mut [&mut p]).unwrap();
            }
            p.tensor.data().to_vec()
        };
        assert_eq!(run(), run());
    }
}
