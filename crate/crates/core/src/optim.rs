//! AdamW with decoupled weight decay, global-norm gradient clipping and a
//! reduce-on-plateau learning-rate scheduler.

use crate::error::{Error, Result};
use crate::nn::ParamKind;

pub const DEFAULT_LEARNING_RATE: f64 = 1e-4;
pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_ADAM_EPSILON: f64 = 1e-8;
pub const DEFAULT_WEIGHT_DECAY: f64 = 0.01;
pub const DEFAULT_MAX_GRAD_NORM: f64 = 1.0;
pub const DEFAULT_PLATEAU_FACTOR: f64 = 0.5;
pub const DEFAULT_PLATEAU_PATIENCE: usize = 3;
pub const DEFAULT_PLATEAU_THRESHOLD: f64 = 1e-8;
pub const DEFAULT_MIN_LR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipConfig {
    pub max_grad_norm: f64,
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self {
            max_grad_norm: DEFAULT_MAX_GRAD_NORM,
        }
    }
}

/// L2 norm over all tensors concatenated, summed in a fixed order.
pub fn global_norm(grads: &[Vec<f64>]) -> f64 {
    grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
}

/// Scale every gradient by `min(1, max_grad_norm / ||g||)`. Returns the norm
/// before clipping.
pub fn clip_gradients(grads: &mut [Vec<f64>], config: &ClipConfig) -> Result<f64> {
    if config.max_grad_norm.is_nan() || config.max_grad_norm <= 0.0 {
        return Err(Error::Config(format!(
            "max_grad_norm must be positive, got {}",
            config.max_grad_norm
        )));
    }
    if let Some((t, i)) = grads
        .iter()
        .enumerate()
        .find_map(|(t, g)| g.iter().position(|v| !v.is_finite()).map(|i| (t, i)))
    {
        return Err(Error::NonFinite(format!("gradient tensor {t} index {i}")));
    }
    let norm = global_norm(grads);
    if norm == 0.0 || norm <= config.max_grad_norm {
        return Ok(norm);
    }

    // Rounding can leave the rescaled norm a few ulps above the bound; shrink
    // the factor until it is not, so that clipping again is a no-op.
    let original: Vec<Vec<f64>> = grads.to_vec();
    let mut scale = config.max_grad_norm / norm;
    loop {
        for (dst, src) in grads.iter_mut().zip(&original) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = s * scale;
            }
        }
        if global_norm(grads) <= config.max_grad_norm {
            return Ok(norm);
        }
        scale *= 1.0 - f64::EPSILON;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: DEFAULT_LEARNING_RATE,
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            epsilon: DEFAULT_ADAM_EPSILON,
            weight_decay: DEFAULT_WEIGHT_DECAY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub step_count: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
}

impl AdamWState {
    /// Zeroed moment buffers for tensors of the given lengths.
    pub fn new(tensor_lens: &[usize], config: AdamWConfig) -> Self {
        Self {
            step_count: 0,
            m: tensor_lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: tensor_lens.iter().map(|&n| vec![0.0; n]).collect(),
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
            learning_rate: config.learning_rate,
            weight_decay: config.weight_decay,
        }
    }

    /// One bias-corrected AdamW update. Decay is applied only to tensors
    /// whose kind decays (dense weights), never to biases or BatchNorm
    /// affine parameters.
    pub fn step(&mut self, params: &mut [(ParamKind, &mut [f64])], grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (t, ((_, p), g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[t].len() || g.len() != self.m[t].len() {
                return Err(Error::Shape(format!(
                    "tensor {t}: buffer {} vs parameter {} vs gradient {}",
                    self.m[t].len(),
                    p.len(),
                    g.len()
                )));
            }
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let correction1 = 1.0 - b1.powi(t);
        let correction2 = 1.0 - b2.powi(t);
        let lr = self.learning_rate;

        for (((kind, p), g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let decay = if kind.decays() { self.weight_decay } else { 0.0 };
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / correction1;
                let v_hat = v[i] / correction2;
                p[i] -= lr * (m_hat / (v_hat.sqrt() + self.epsilon) + decay * p[i]);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    pub best_loss: f64,
    pub bad_epochs: usize,
    pub min_lr: f64,
    pub threshold: f64,
}

impl Default for PlateauScheduler {
    fn default() -> Self {
        Self::new(
            DEFAULT_PLATEAU_FACTOR,
            DEFAULT_PLATEAU_PATIENCE,
            DEFAULT_MIN_LR,
            DEFAULT_PLATEAU_THRESHOLD,
        )
    }
}

impl PlateauScheduler {
    pub fn new(factor: f64, patience: usize, min_lr: f64, threshold: f64) -> Self {
        Self {
            factor,
            patience,
            best_loss: f64::INFINITY,
            bad_epochs: 0,
            min_lr,
            threshold,
        }
    }

    /// Feed one epoch's validation loss; returns the learning rate for the
    /// next epoch. The rate is cut once more than `patience` consecutive
    /// epochs fail to beat the best loss by `threshold`.
    pub fn observe(&mut self, val_loss: f64, current_lr: f64) -> Result<f64> {
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!("validation loss {val_loss}")));
        }
        if val_loss < self.best_loss - self.threshold {
            self.best_loss = val_loss;
            self.bad_epochs = 0;
            return Ok(current_lr);
        }
        self.bad_epochs += 1;
        if self.bad_epochs > self.patience {
            self.bad_epochs = 0;
            return Ok((current_lr * self.factor).max(self.min_lr).min(current_lr));
        }
        Ok(current_lr)
    }
}
