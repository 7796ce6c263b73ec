//! Noise schedule, forward/reverse processes, the conditional training loss
//! and the two samplers.

mod loss;
mod process;
mod sampler;
mod schedule;

use thiserror::Error;

use crate::numerics::{BoundParams, DenseArray, NumericsError, ParamStore, Tape, Var};

pub use loss::{batch_loss, item_loss, item_loss_with_tape, LossItem, LossOutput};
pub use process::{forward_noise, mu_theta, reverse_step};
pub use sampler::{
    sample_chain, sample_deterministic, sample_stochastic, CountingPredictor, GaussianNoise,
    NoiseSource, ZeroNoise,
};
pub use schedule::NoiseSchedule;

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("config error: {0}")]
    Config(String),
    #[error("diffusion step {k} outside 1..={steps}")]
    StepOutOfRange { k: usize, steps: usize },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("sampling diverged at step {k}")]
    Diverged { k: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Conditional noise predictor `ε_θ(P^k, k | P_obs)`.
pub trait NoisePredictor: Sync {
    fn predict_noise(
        &self,
        p_obs: &DenseArray,
        p_k: &DenseArray,
        k: usize,
    ) -> Result<DenseArray, DiffusionError>;
}

/// A noise predictor whose forward pass can be recorded on a [`Tape`].
pub trait TapeDenoiser: Sync {
    fn params(&self) -> &ParamStore;

    /// Records `ε_θ(p_k, k | p_obs)` using the bound parameters; returns the
    /// L×D prediction.
    fn noise_on_tape(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        p_obs: &DenseArray,
        p_k: &DenseArray,
        k: usize,
    ) -> Result<Var, NumericsError>;

}
