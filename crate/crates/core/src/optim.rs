//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// Per-parameter first and second moments plus the step counter.
#[derive(Clone, Debug)]
pub struct AdamState {
    config: AdamConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            first: Vec::new(),
            second: Vec::new(),
            step: 0,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// Changes the learning rate for subsequent steps; moments are kept.
    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// Number of updates applied so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// Applies one update. Moments are created on the first call and must
    /// keep matching the parameter shapes afterwards.
    pub fn adam_step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::InvalidArgument(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            p.expect_same_shape(g, "adam_step")?;
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { step: self.step + 1 });
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            self.second = self.first.clone();
        } else if self.first.len() != params.len()
            || self.first.iter().zip(params.iter()).any(|(m, p)| m.shape() != p.shape())
        {
            return Err(Error::InvalidArgument("parameter set changed between Adam steps".into()));
        }

        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.first[k].data_mut();
            let v = self.second[k].data_mut();
            for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let gi = gi as f64;
                let mi = beta1 * m[i] as f64 + (1.0 - beta1) * gi;
                let vi = beta2 * v[i] as f64 + (1.0 - beta2) * gi * gi;
                m[i] = mi as f32;
                v[i] = vi as f32;
                let update = lr * (mi / bc1) / ((vi / bc2).sqrt() + eps);
                *w = (*w as f64 - update) as f32;
            }
        }
        Ok(())
    }
}
