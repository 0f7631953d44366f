use serde::{Deserialize, Serialize};

use super::{ParamVector, SslError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SgdConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Cosine schedule floor as a fraction of `lr0`.
    pub lr_min_ratio: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr0: 0.9,
            momentum: 0.9,
            weight_decay: 5e-4,
            lr_min_ratio: 1e-3,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<(), SslError> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(SslError::Config(format!(
                "lr0 must be positive, got {}",
                self.lr0
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(SslError::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(SslError::Config(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if !(0.0..=1.0).contains(&self.lr_min_ratio) {
            return Err(SslError::Config(format!(
                "lr_min_ratio must be in [0, 1], got {}",
                self.lr_min_ratio
            )));
        }
        Ok(())
    }

    pub fn lr_min(&self) -> f64 {
        self.lr0 * self.lr_min_ratio
    }
}

/// SGD with classical momentum and L2 weight decay.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub config: SgdConfig,
    buffer: Vec<f64>,
}

impl Sgd {
    pub fn new(config: SgdConfig, len: usize) -> Self {
        Self {
            config,
            buffer: vec![0.0; len],
        }
    }

    pub fn buffer(&self) -> &[f64] {
        &self.buffer
    }

    /// `buf ← μ·buf + (g + λ·θ)`, then `θ ← θ − lr·buf`.
    pub fn step(
        &mut self,
        params: &mut ParamVector,
        grads: &[f64],
        lr: f64,
    ) -> Result<(), SslError> {
        if grads.len() != params.len() || self.buffer.len() != params.len() {
            return Err(SslError::ParamLength {
                expected: params.len(),
                got: grads.len(),
            });
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(SslError::NonFinite("gradient"));
        }
        let SgdConfig {
            momentum,
            weight_decay,
            ..
        } = self.config;
        for ((p, &g), b) in params
            .values_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.buffer)
        {
            *b = momentum * *b + (g + weight_decay * *p);
            *p -= lr * *b;
        }
        if params.values().iter().any(|p| !p.is_finite()) {
            return Err(SslError::NonFinite("parameters"));
        }
        Ok(())
    }
}

/// Cosine annealing from `lr0` at round 0 to `lr_min` at `max_rounds`.
/// Rounds past the end stay at `lr_min`.
pub fn cosine_lr(round: usize, max_rounds: usize, lr0: f64, lr_min: f64) -> f64 {
    if round >= max_rounds {
        return if max_rounds == 0 && round == 0 {
            lr0
        } else {
            lr_min
        };
    }
    let t = round as f64 / max_rounds as f64;
    lr_min + 0.5 * (lr0 - lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
}
