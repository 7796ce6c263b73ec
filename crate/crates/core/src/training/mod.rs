//! Adam training of the denoiser, CKPT1 checkpoints and the loss log.

mod adam;
mod checkpoint;
mod trainer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::denoiser::DenoiserError;
use crate::diffusion::DiffusionError;
use crate::motion_data::MotionError;
use crate::numerics::NumericsError;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, RngState, ScheduleParams,
    CHECKPOINT_VERSION,
};
pub use trainer::{loss_log_csv, train, LogEntry, TrainOutcome, Trainer, DIVERGENCE_LOSS};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config error: {0}")]
    Config(String),
    #[error("non-finite gradient for parameter `{param}` at flat index {index}")]
    NonFiniteGradient { param: String, index: usize },
    #[error("training diverged at iteration {iteration} (loss {loss}); last good checkpoint is iteration {}", last_good.iteration)]
    Diverged {
        iteration: u64,
        loss: f64,
        last_good: Box<Checkpoint>,
    },
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint integrity error: {0}")]
    Integrity(String),
    #[error("checkpoint does not match the requested configuration: {0}")]
    Mismatch(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Denoiser(#[from] DenoiserError),
    #[error(transparent)]
    Motion(#[from] MotionError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Optimisation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iterations: u64,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Iterations between snapshots; 0 keeps only the initial state.
    pub checkpoint_every: u64,
    /// Window length of the loss log.
    pub log_every: u64,
    /// Rescale the gradient to this global L2 norm when it is larger.
    pub clip_grad_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            iterations: 2_000,
            lr: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            checkpoint_every: 500,
            log_every: 100,
            clip_grad_norm: None,
        }
    }
}

impl TrainConfig {
    /// Full-scale settings: batch 512 for 50,000 iterations.
    pub fn paper() -> Self {
        Self {
            batch_size: 512,
            iterations: 50_000,
            checkpoint_every: 5_000,
            ..Self::default()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let unit = |b: f64| (0.0..1.0).contains(&b);
        if self.batch_size == 0 || self.iterations == 0 || self.log_every == 0 {
            return Err(TrainError::Config("batch_size, iterations and log_every must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.adam_eps > 0.0) {
            return Err(TrainError::Config("lr and adam_eps must be positive".into()));
        }
        if !unit(self.adam_beta1) || !unit(self.adam_beta2) {
            return Err(TrainError::Config("Adam betas must lie in [0, 1)".into()));
        }
        if let Some(c) = self.clip_grad_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(TrainError::Config("clip_grad_norm must be positive".into()));
            }
        }
        Ok(())
    }
}
