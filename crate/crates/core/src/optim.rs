//! Adam with coupled L2 weight decay, ReduceLROnPlateau, and early stopping.
//! Each is a small state machine advanced explicitly by the trainer.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::MlpParams;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: MlpParams,
    pub v: MlpParams,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr: f64,
    pub weight_decay: f64,
}

impl AdamState {
    pub fn new(params: &MlpParams, lr: f64, weight_decay: f64) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            lr,
            weight_decay,
        }
    }

    /// One update. Weight decay is added to the gradient before the moment
    /// updates (coupled L2), not applied to the parameters directly.
    pub fn step(&mut self, params: &mut MlpParams, grads: &MlpParams) -> Result<()> {
        params.check_same_shape(grads)?;
        params.check_same_shape(&self.m)?;
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, eps, lr, wd) = (self.beta1, self.beta2, self.eps, self.lr, self.weight_decay);

        let ps = params.tensors_mut();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, m), v), g) in ps.into_iter().zip(ms).zip(vs).zip(grads.tensors()) {
            for i in 0..p.len() {
                let gi = g[i] + wd * p[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauState {
    pub best_val: f64,
    pub epochs_since_improvement: usize,
    pub factor: f64,
    pub patience: usize,
    pub threshold: f64,
    pub min_lr: f64,
}

impl PlateauState {
    pub const DEFAULT_PATIENCE: usize = 2;
    pub const DEFAULT_THRESHOLD: f64 = 1e-4;
    pub const MIN_LR: f64 = 1e-8;

    pub fn new(patience: usize, threshold: f64) -> Self {
        assert!(patience >= 1, "plateau patience must be at least 1");
        Self {
            best_val: f64::INFINITY,
            epochs_since_improvement: 0,
            factor: 0.5,
            patience,
            threshold,
            min_lr: Self::MIN_LR,
        }
    }

    /// Feeds one validation loss; returns the learning rate to use next.
    /// After `patience` consecutive epochs without beating `best - threshold`,
    /// the rate is multiplied by `factor` and the counter resets.
    pub fn update(&mut self, val_loss: f64, lr: f64) -> f64 {
        if val_loss < self.best_val - self.threshold {
            self.best_val = val_loss;
            self.epochs_since_improvement = 0;
            return lr;
        }
        self.epochs_since_improvement += 1;
        if self.epochs_since_improvement >= self.patience {
            self.epochs_since_improvement = 0;
            return (lr * self.factor).max(self.min_lr).min(lr);
        }
        lr
    }
}

impl Default for PlateauState {
    fn default() -> Self {
        Self::new(Self::DEFAULT_PATIENCE, Self::DEFAULT_THRESHOLD)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopState {
    pub best_val: f64,
    pub epochs_since_improvement: usize,
    pub patience: usize,
    pub min_delta: f64,
}

impl EarlyStopState {
    pub const DEFAULT_PATIENCE: usize = 5;
    pub const DEFAULT_MIN_DELTA: f64 = 1e-4;

    pub fn new(patience: usize, min_delta: f64) -> Self {
        assert!(patience >= 1, "early-stopping patience must be at least 1");
        assert!(min_delta >= 0.0);
        Self {
            best_val: f64::INFINITY,
            epochs_since_improvement: 0,
            patience,
            min_delta,
        }
    }

    /// Returns true once `patience` consecutive epochs failed to improve.
    pub fn update(&mut self, val_loss: f64) -> bool {
        if val_loss < self.best_val - self.min_delta {
            self.best_val = val_loss;
            self.epochs_since_improvement = 0;
        } else {
            self.epochs_since_improvement += 1;
        }
        self.epochs_since_improvement >= self.patience
    }
}

impl Default for EarlyStopState {
    fn default() -> Self {
        Self::new(Self::DEFAULT_PATIENCE, Self::DEFAULT_MIN_DELTA)
    }
}
