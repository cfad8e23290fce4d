//! First-order optimizers operating on a [`ParamStore`].

use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    RmsProp,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Squared-gradient decay for RMSProp.
    #[serde(default = "default_decay")]
    pub decay: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_decay() -> f64 {
    0.9
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            decay: default_decay(),
        }
    }

    pub fn rms_prop(lr: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::RmsProp,
            ..Self::adam(lr)
        }
    }

    pub fn sgd(lr: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            ..Self::adam(lr)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..1.0).contains(&v);
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !unit(self.beta1) || !unit(self.beta2) || !unit(self.decay) {
            return Err(Error::Config("optimizer decay rates must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("optimizer eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Optimizer<T: Real> {
    config: OptimizerConfig,
    steps: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Real> Optimizer<T> {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Optimizer {
            config,
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update. `grads` is aligned with `params`; `None` entries
    /// (buffers) are skipped. Nothing is modified if any gradient is
    /// non-finite or mis-shaped.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Option<Tensor<T>>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Contract(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            let Some(g) = g else { continue };
            if g.shape() != p.value.shape() {
                return Err(Error::Shape(format!(
                    "gradient {:?} for parameter `{}` {:?}",
                    g.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of `{}`", p.name)));
            }
        }
        if self.first.len() != params.len() {
            self.first = params.iter().map(|p| vec![T::zero(); p.value.numel()]).collect();
            self.second = self.first.clone();
        }
        self.steps += 1;
        let c = &self.config;
        let lr = T::of(c.lr);
        let eps = T::of(c.eps);
        let (b1, b2, decay) = (T::of(c.beta1), T::of(c.beta2), T::of(c.decay));
        let bc1 = T::one() - T::of(c.beta1.powf(self.steps as f64));
        let bc2 = T::one() - T::of(c.beta2.powf(self.steps as f64));
        let one = T::one();
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            let w = p.value.data_mut();
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            match c.kind {
                OptimizerKind::Sgd => {
                    for (w, &g) in w.iter_mut().zip(g.data()) {
                        *w = *w - lr * g;
                    }
                }
                OptimizerKind::Adam => {
                    let (inv1, inv2) = (one / bc1, one / bc2);
                    for (((w, &gj), m), v) in w.iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m = b1 * *m + (one - b1) * gj;
                        *v = b2 * *v + (one - b2) * gj * gj;
                        *w = *w - lr * (*m * inv1) / ((*v * inv2).sqrt() + eps);
                    }
                }
                OptimizerKind::RmsProp => {
                    for ((w, &gj), v) in w.iter_mut().zip(g.data()).zip(v.iter_mut()) {
                        *v = decay * *v + (one - decay) * gj * gj;
                        *w = *w - lr * gj / (v.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Clamps every trainable weight into `[-c, c]`.
pub fn clip_weights<T: Real>(params: &mut ParamStore<T>, c: f64) -> Result<()> {
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::Contract(format!("clip bound must be positive, got {c}")));
    }
    let c = T::of(c);
    for p in params.iter_mut().filter(|p| p.trainable) {
        for w in p.value.data_mut() {
            *w = w.max(-c).min(c);
        }
    }
    Ok(())
}
