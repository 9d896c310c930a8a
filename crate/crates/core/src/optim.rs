//! Adam with L2 weight decay folded into the gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        Self { learning_rate, weight_decay, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self::new(1e-4, 1e-4)
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    config: AdamConfig,
    step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, first: Vec::new(), second: Vec::new() }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. Parameter shapes are fixed by the first call.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Dimension(format!("{} params but {} gradients", params.len(), grads.len())));
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len() {
            return Err(Error::Dimension(format!(
                "optimizer tracks {} params, got {}",
                self.first.len(),
                params.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.first[i].shape() {
                return Err(Error::Dimension(format!(
                    "param {i}: {:?} vs gradient {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
        }

        self.step += 1;
        let AdamConfig { learning_rate, weight_decay, beta1, beta2, eps } = self.config;
        let bias1 = 1.0 - beta1.powi(self.step as i32);
        let bias2 = 1.0 - beta2.powi(self.step as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.first[i].as_mut_slice();
            let v = self.second[i].as_mut_slice();
            for (((w, &gw), mw), vw) in p.as_mut_slice().iter_mut().zip(g.as_slice()).zip(m).zip(v) {
                let grad = gw + weight_decay * *w;
                *mw = beta1 * *mw + (1.0 - beta1) * grad;
                *vw = beta2 * *vw + (1.0 - beta2) * grad * grad;
                let m_hat = *mw / bias1;
                let v_hat = *vw / bias2;
                *w -= learning_rate * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_without_decay_leaves_param() {
        let mut w = Matrix::from_rows(&[[0.3, -1.2]]);
        let before = w.clone();
        let mut adam = AdamState::new(AdamConfig::new(0.1, 0.0));
        adam.step(&mut [&mut w], &[Matrix::zeros(1, 2)]).unwrap();
        assert_eq!(w, before);
    }

    #[test]
    fn step_moves_against_gradient() {
        // f(w) = w^2 at w = 1 has gradient 2
        let mut w = Matrix::scalar(1.0);
        let mut adam = AdamState::new(AdamConfig::new(0.1, 0.0));
        adam.step(&mut [&mut w], &[Matrix::scalar(2.0)]).unwrap();
        assert!(w.item() < 1.0);
    }

    #[test]
    fn converges_on_quadratic() {
        // f(a, b) = (a - 3)^2 + 2 (b + 1)^2
        let mut w = Matrix::from_rows(&[[0.0, 0.0]]);
        let mut adam = AdamState::new(AdamConfig::new(0.05, 0.0));
        let loss = |w: &Matrix| (w[(0, 0)] - 3.0).powi(2) + 2.0 * (w[(0, 1)] + 1.0).powi(2);
        for _ in 0..500 {
            let g = Matrix::from_rows(&[[2.0 * (w[(0, 0)] - 3.0), 4.0 * (w[(0, 1)] + 1.0)]]);
            adam.step(&mut [&mut w], &[g]).unwrap();
        }
        assert!(loss(&w) < 1e-4, "loss {}", loss(&w));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut w = Matrix::zeros(2, 2);
        let mut adam = AdamState::new(AdamConfig::default());
        assert!(adam.step(&mut [&mut w], &[Matrix::zeros(1, 2)]).is_err());
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut w = Matrix::from_rows(&[[0.1, 0.2], [0.3, 0.4]]);
            let mut adam = AdamState::new(AdamConfig::new(1e-3, 1e-4));
            for k in 0..20 {
                let g = w.map(|v| (v * k as f64).sin());
                adam.step(&mut [&mut w], &[g]).unwrap();
            }
            w
        };
        let (a, b) = (run(), run());
        assert!(a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
