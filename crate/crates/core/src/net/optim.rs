use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result};

use super::Network;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr: 2e-4,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with decoupled weight decay, one instance per network.
#[derive(Debug, Clone)]
pub struct AdamW {
    config: OptimizerConfig,
    first: Vec<f64>,
    second: Vec<f64>,
    step: u64,
}

impl AdamW {
    pub fn new(config: OptimizerConfig, num_params: usize) -> Self {
        AdamW {
            config,
            first: vec![0.0; num_params],
            second: vec![0.0; num_params],
            step: 0,
        }
    }

    pub fn for_network(config: OptimizerConfig, net: &Network) -> Self {
        Self::new(config, net.num_params())
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.first, &self.second)
    }

    pub fn step(&mut self, net: &mut Network, grads: &[f64]) -> Result<()> {
        self.step_params(net.params_mut(), grads)
    }

    pub fn step_params(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        check_dim("optimizer parameters", self.first.len(), params.len())?;
        check_dim("optimizer gradients", self.first.len(), grads.len())?;
        self.step += 1;
        let OptimizerConfig {
            lr,
            weight_decay,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * (weight_decay * *p + m_hat / (v_hat.sqrt() + eps));
        }
        Ok(())
    }
}
