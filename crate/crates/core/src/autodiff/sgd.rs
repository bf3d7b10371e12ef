use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr.is_nan()
            || self.lr <= 0.0
            || !(0.0..1.0).contains(&self.momentum)
            || self.weight_decay.is_nan()
            || self.weight_decay < 0.0
        {
            return Err(Error::Config(format!(
                "sgd needs lr > 0, momentum in [0,1), weight_decay >= 0; got {self:?}"
            )));
        }
        Ok(())
    }
}

/// SGD with heavy-ball momentum and L2 weight decay.
///
/// Velocity buffers are created lazily on the first step, zero-filled.
#[derive(Debug, Clone)]
pub struct SgdState {
    cfg: SgdConfig,
    velocity: Vec<Vec<f64>>,
}

impl SgdState {
    pub fn new(cfg: SgdConfig) -> Self {
        Self {
            cfg,
            velocity: Vec::new(),
        }
    }

    pub fn config(&self) -> &SgdConfig {
        &self.cfg
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }

    /// `g' = g + wd·w; v = momentum·v + g'; w = w − lr·v`, applied per tensor.
    ///
    /// Parameters are untouched if any gradient is non-finite.
    pub fn step<'a, I>(&mut self, params: I, grads: &[Tensor]) -> Result<()>
    where
        I: IntoIterator<Item = &'a mut Tensor>,
    {
        let params: Vec<&mut Tensor> = params.into_iter().collect();
        if params.len() != grads.len() {
            return Err(Error::Dimension {
                op: "sgd_step",
                lhs: vec![params.len()],
                rhs: vec![grads.len()],
            });
        }
        for (p, g) in params.iter().zip(grads) {
            if !p.same_shape(g) {
                return Err(Error::Dimension {
                    op: "sgd_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of parameter {i}")));
        }
        if self.velocity.is_empty() {
            self.velocity = grads.iter().map(|g| vec![0.0; g.numel()]).collect();
        }
        let SgdConfig {
            lr,
            momentum,
            weight_decay,
        } = self.cfg;
        for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.velocity) {
            for ((w, &gv), vel) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                let eff = gv + weight_decay * *w;
                *vel = momentum * *vel + eff;
                *w -= lr * *vel;
            }
        }
        Ok(())
    }
}
