use serde::{Deserialize, Serialize};

use crate::nn::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction and no weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        Self {
            config,
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    /// Applies one update. Parameters without a gradient are left untouched.
    pub fn update(&mut self, params: &mut [Tensor], grads: &[Option<Tensor>], lr: f64) {
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (((p, g), m), v) in params[i].data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let mh = *m / c1;
                let vh = *v / c2;
                *p -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        // With bias correction the first update is lr * sign(g) (up to eps).
        let mut p = vec![Tensor::from_vec([1, 1, 1, 2], vec![1.0, -1.0]).unwrap()];
        let g = vec![Some(Tensor::from_vec([1, 1, 1, 2], vec![3.0, -0.2]).unwrap())];
        let mut adam = Adam::new(AdamConfig::default(), &p);
        adam.update(&mut p, &g, 0.01);
        assert!((p[0].data()[0] - 0.99).abs() < 1e-9);
        assert!((p[0].data()[1] + 0.99).abs() < 1e-9);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = vec![Tensor::from_vec([1, 1, 1, 1], vec![5.0]).unwrap()];
        let mut adam = Adam::new(AdamConfig::default(), &p);
        for _ in 0..2000 {
            let g = vec![Some(Tensor::from_vec([1, 1, 1, 1], vec![2.0 * (p[0].data()[0] - 1.5)]).unwrap())];
            adam.update(&mut p, &g, 0.05);
        }
        assert!((p[0].data()[0] - 1.5).abs() < 1e-2);
    }

    #[test]
    fn missing_gradients_are_skipped() {
        let mut p = vec![Tensor::full([1, 1, 1, 1], 2.0)];
        let mut adam = Adam::new(AdamConfig::default(), &p);
        adam.update(&mut p, &[None], 0.1);
        assert_eq!(p[0].data()[0], 2.0);
    }
}
