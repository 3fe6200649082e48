//! Adaptive-moment optimizer.

use serde::{Deserialize, Serialize};

use crate::network::Network;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One first/second moment pair per parameter tensor, in the network's parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, net: &Network<T>) -> Self {
        let shapes: Vec<usize> = net.params().iter().map(|(_, p)| p.len()).collect();
        Self {
            config,
            step: 0,
            m: shapes.iter().map(|n| vec![T::zero(); *n]).collect(),
            v: shapes.iter().map(|n| vec![T::zero(); *n]).collect(),
        }
    }

    /// Applies the accumulated gradients and clears them.
    pub fn step(&mut self, net: &mut Network<T>) {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let step_size = T::lit(c.lr / bc1);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let inv_sqrt_bc2 = T::lit(1.0 / bc2.sqrt());
        let eps = T::lit(c.eps);
        for (((_, p), m), v) in net.params_mut().into_iter().zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + one_b1 * g;
                v[i] = b2 * v[i] + one_b2 * g * g;
                p.value[i] -= step_size * m[i] / (v[i].sqrt() * inv_sqrt_bc2 + eps);
                p.grad[i] = T::zero();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Head, NetworkConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn first_step_moves_each_weight_by_lr_against_the_gradient_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = Network::<f64>::new(Head::Critic, NetworkConfig::tiny(), &mut rng).unwrap();
        let before = net.output.bias.value[0];
        net.output.bias.grad[0] = 3.0;
        let mut opt = Adam::new(AdamConfig::with_lr(0.01), &net);
        opt.step(&mut net);
        assert!((net.output.bias.value[0] - (before - 0.01)).abs() < 1e-8);
        assert_eq!(net.output.bias.grad[0], 0.0);
        assert_eq!(opt.step, 1);
    }
}
