use super::ParamSet;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers are created on the first step
/// from the parameter shapes.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step<P: ParamSet>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let grad_blocks = grads.blocks();
        let names = || grads.block_names();
        for (i, g) in grad_blocks.iter().enumerate() {
            if let Some(pos) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient in {} at element {pos}",
                    names()[i]
                )));
            }
        }
        let mut param_blocks = params.blocks_mut();
        if param_blocks.len() != grad_blocks.len()
            || param_blocks.iter().zip(&grad_blocks).any(|(p, g)| p.len() != g.len())
        {
            return Err(Error::Dimension("gradient shapes do not match parameters".into()));
        }
        if self.first.is_empty() {
            self.first = grad_blocks.iter().map(|g| vec![0.0; g.len()]).collect();
            self.second = self.first.clone();
        } else if self.first.len() != grad_blocks.len()
            || self.first.iter().zip(&grad_blocks).any(|(m, g)| m.len() != g.len())
        {
            return Err(Error::Dimension("optimizer state shape changed between steps".into()));
        }

        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in param_blocks
            .iter_mut()
            .zip(&grad_blocks)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
