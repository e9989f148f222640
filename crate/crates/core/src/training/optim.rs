use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam with per-step learning rate.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    config: AdamConfig,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
    steps: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, params: &[Tensor<T>]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Adam {
            config,
            first: zeros(),
            second: zeros(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn first_moments(&self) -> &[Tensor<T>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Tensor<T>] {
        &self.second
    }

    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::Shape(format!(
                "{} parameters, {} gradients, optimizer tracks {}",
                params.len(),
                grads.len(),
                self.first.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != self.first[i].shape() || g.shape() != p.shape() {
                return Err(Error::Shape(format!(
                    "tensor {i}: parameter {:?}, gradient {:?}, moments {:?}",
                    p.shape(),
                    g.shape(),
                    self.first[i].shape()
                )));
            }
        }
        self.steps += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.steps as i32;
        let c1 = 1.0 / (1.0 - beta1.powi(t));
        let c2 = 1.0 / (1.0 - beta2.powi(t));
        let (b1, b2) = (T::from_f64(beta1), T::from_f64(beta2));
        let (one_b1, one_b2) = (T::from_f64(1.0 - beta1), T::from_f64(1.0 - beta2));
        let (c1, c2) = (T::from_f64(c1), T::from_f64(c2));
        let (lr, eps) = (T::from_f64(lr), T::from_f64(eps));
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            let iter = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
            for ((w, g), (m, v)) in iter {
                *m = b1 * *m + one_b1 * *g;
                *v = b2 * *v + one_b2 * *g * *g;
                let m_hat = *m * c1;
                let v_hat = *v * c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Single-cycle cosine annealing from `lr_max` at step 0 to zero at `total`.
/// Steps past `total` stay at zero.
pub fn cosine_lr(step: usize, total: usize, lr_max: f64) -> f64 {
    if step >= total {
        return 0.0;
    }
    0.5 * lr_max * (1.0 + (PI * step as f64 / total as f64).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut w = vec![Tensor::<f64>::scalar(1.0)];
        let mut adam = Adam::new(AdamConfig::default(), &w);
        // loss w^2/2 has gradient w
        let g = vec![w[0].clone()];
        adam.step(&mut w, &g, 0.1).unwrap();
        let expected = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((w[0].data()[0] - expected).abs() < 1e-15);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn zero_gradient_keeps_parameters_and_decays_moments() {
        let mut w = vec![Tensor::<f64>::from_f64(&[2], &[0.5, -1.0]).unwrap()];
        let mut adam = Adam::new(AdamConfig::default(), &w);
        adam.step(
            &mut w,
            &[Tensor::from_f64(&[2], &[1.0, 1.0]).unwrap()],
            0.01,
        )
        .unwrap();
        let before = w.clone();
        let (m0, v0) = (
            adam.first_moments()[0].clone(),
            adam.second_moments()[0].clone(),
        );
        adam.step(&mut w, &[Tensor::zeros(&[2])], 0.0).unwrap();
        assert_eq!(w, before);
        for i in 0..2 {
            assert!((adam.first_moments()[0].data()[i] - 0.9 * m0.data()[i]).abs() < 1e-15);
            assert!((adam.second_moments()[0].data()[i] - 0.999 * v0.data()[i]).abs() < 1e-15);
        }
        let mut w = vec![Tensor::<f64>::from_f64(&[2], &[0.5, -1.0]).unwrap()];
        let mut fresh = Adam::new(AdamConfig::default(), &w);
        fresh.step(&mut w, &[Tensor::zeros(&[2])], 0.1).unwrap();
        assert_eq!(w[0].data(), &[0.5, -1.0]);
    }

    #[test]
    fn converges_on_convex_quadratic() {
        // loss = sum_i c_i (w_i - t_i)^2
        let c = [1.0, 4.0, 0.5];
        let target = [0.3, -0.7, 1.2];
        let loss = |w: &[f64]| {
            (0..3)
                .map(|i| c[i] * (w[i] - target[i]).powi(2))
                .sum::<f64>()
        };
        let mut w = vec![Tensor::<f64>::zeros(&[3])];
        let mut adam = Adam::new(AdamConfig::default(), &w);
        let initial = loss(w[0].data());
        for _ in 0..100 {
            let g: Vec<f64> = (0..3)
                .map(|i| 2.0 * c[i] * (w[0].data()[i] - target[i]))
                .collect();
            adam.step(&mut w, &[Tensor::from_f64(&[3], &g).unwrap()], 0.1)
                .unwrap();
        }
        assert!(loss(w[0].data()) < 1e-3 * initial, "{}", loss(w[0].data()));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut w = vec![Tensor::<f32>::zeros(&[2])];
        let mut adam = Adam::new(AdamConfig::default(), &w);
        assert!(adam.step(&mut w, &[Tensor::zeros(&[3])], 0.1).is_err());
        assert!(adam.step(&mut w, &[], 0.1).is_err());
    }

    #[test]
    fn cosine_schedule_points() {
        assert_eq!(cosine_lr(0, 100, 4e-4), 4e-4);
        assert_eq!(cosine_lr(100, 100, 4e-4), 0.0);
        assert!((cosine_lr(50, 100, 4e-4) - 2e-4).abs() < 1e-18);
        assert_eq!(cosine_lr(150, 100, 4e-4), 0.0);
        let seq: Vec<f64> = (0..=100).map(|t| cosine_lr(t, 100, 1.0)).collect();
        assert!(seq.windows(2).all(|w| w[1] <= w[0]));
    }
}
