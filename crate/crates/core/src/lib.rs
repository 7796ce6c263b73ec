//! Conditional denoising diffusion for 3D human-motion prediction.
//!
//! A spatio-temporal transformer learns to predict the noise added to a
//! future pose window given the observed past. One trained model serves two
//! uses: seeded stochastic sampling of many plausible futures, and a
//! deterministic prediction obtained by running the reverse chain with all
//! noise set to zero.
//!
//! Modules, bottom-up:
//! - [`numerics`]: dense arrays and the reverse-mode tape
//! - [`motion_data`]: sequences, synthetic data, windows, normalization, files
//! - [`diffusion`]: schedule, forward/reverse process, loss, samplers
//! - [`denoiser`]: series and parallel transformer noise predictors
//! - [`training`]: Adam, the training loop and checkpoints
//! - [`metrics`]: APD, displacement errors, Euler-angle MSE

pub mod denoiser;
pub mod diffusion;
pub mod gradcheck;
pub mod metrics;
pub mod motion_data;
pub mod numerics;
pub mod training;
